"""Command-line entry point: ``homessl {train,eval,moments,diagnose}``.

Exit codes: 0 success, 1 usage error (bad flags, missing or invalid config),
2 runtime failure (divergence, unreadable input, I/O). Failures print one
JSON record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_override, with_overrides
from .data import generate, read_dataset_csv, split
from .diagnostics import linear_probe, moment_audit, write_audit_csv, xor_suite
from .model import load_checkpoint, save_checkpoint
from .moments import MomentSpec, write_report_csv
from .parallel import blas_threads
from .trainer import DivergenceError, embeddings, representations, train

OUTPUT_ENV = "HOMESSL_OUTPUT_DIR"
DEFAULT_OUTPUT = "homessl-out"

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--variant", help="loss variant, optionally prefixed with HOME-")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float, help="base learning rate (also caps the final rate)")
    p.add_argument("--threads", type=int, help="worker threads; 1 is bitwise deterministic")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="homessl", description="High-order mixed-moment SSL loss: train, probe, audit.")
    parser.add_argument("--version", action="version", version=f"homessl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train on the synthetic task, write metrics and checkpoints")
    _common(p)

    p = sub.add_parser("eval", help="linear probe on frozen representations of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset CSV (label,feature_1,..) instead of the synthetic task")

    p = sub.add_parser("moments", help="audit mixed moments of embeddings")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="embedding CSV with feature_1.. columns")
    src.add_argument("--checkpoint", help="embed the synthetic test split with this checkpoint")

    p = sub.add_parser("diagnose", help="XOR pairwise-vs-mutual independence check")
    _common(p)
    p.add_argument("--samples", type=int, default=10_000)
    return parser


def _resolve(args) -> RunConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    overrides = [parse_override(o) for o in args.overrides]
    config = load_config(args.config, overrides)
    return with_overrides(config, variant=args.variant, seed=args.seed, lr=args.lr,
                          threads=args.threads, output_dir=args.out)


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(record: dict, config: RunConfig) -> dict:
    record["config_hash"] = config.config_hash()
    record["version"] = __version__
    return record


def _dump(record) -> str:
    return json.dumps(record, separators=(",", ":"))


def cmd_train(config: RunConfig) -> int:
    out = _output_dir(config)
    with open(out / "metrics.jsonl", "w") as metrics, open(out / "timing.jsonl", "w") as timing:
        state = train(config.train,
                      sink=lambda r: metrics.write(_dump(_stamp(r, config)) + "\n"),
                      timing_sink=lambda r: timing.write(_dump(r) + "\n"))
    save_checkpoint(state.initial_model, out / "init.ckpt")
    save_checkpoint(state.model, out / "final.ckpt")
    (out / "config.json").write_text(_dump(_stamp({"config": config.as_dict()}, config)) + "\n")
    print(_dump(_stamp({"status": "ok", "iterations": state.step,
                        "final_epoch_loss": state.epoch_losses[-1], "output_dir": str(out)}, config)))
    return EXIT_OK


def _task(config: RunConfig, data_csv=None):
    tc = config.train.resolved()
    dataset = read_dataset_csv(data_csv) if data_csv else generate(tc.data)
    train_idx, test_idx = split(dataset, tc.test_fraction, tc.seed)
    return dataset, train_idx, test_idx


def cmd_eval(config: RunConfig, checkpoint, data_csv=None) -> int:
    out = _output_dir(config)
    model = load_checkpoint(checkpoint)
    dataset, tr, te = _task(config, data_csv)
    with blas_threads(config.threads):
        reps = representations(model, dataset.samples)
    y = dataset.labels
    result = linear_probe(reps[tr], y[tr], reps[te], y[te], config.probe.iterations, config.probe.lr)
    record = _stamp({"checkpoint": str(checkpoint), **result.record()}, config)
    (out / "probe.json").write_text(_dump(record) + "\n")
    print(_dump(record))
    return EXIT_OK


def read_embedding_csv(path) -> np.ndarray:
    """Read ``feature_1..feature_D`` columns; any other columns (e.g. label) are ignored."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: empty file")
        cols = [i for i, h in enumerate(header) if h.strip().startswith("feature_")]
        if not cols:
            raise ValueError(f"{path}: header has no feature_ columns")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}:{line_no}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(rec[i]) for i in cols])
            except ValueError as err:
                raise ValueError(f"{path}:{line_no}: {err}") from err
    z = np.array(rows, dtype=np.float64).reshape(-1, len(cols))
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{path}: non-finite values")
    return z


def cmd_moments(config: RunConfig, input_csv=None, checkpoint=None) -> int:
    out = _output_dir(config)
    if input_csv is not None:
        z = read_embedding_csv(input_csv)
    else:
        model = load_checkpoint(checkpoint)
        dataset, _, te = _task(config)
        z = embeddings(model, dataset.samples[te])
    D = z.shape[1]
    audit = config.audit
    try:
        spec = MomentSpec(D, audit.orders, audit.sampling(D))
    except ValueError as err:
        raise ConfigError(f"audit settings do not fit D={D}: {err}") from err
    summaries, report = moment_audit(z, spec, config.train.loss.epsilon, audit.bins, config.threads)
    write_report_csv(report, out / "moments.csv")
    write_audit_csv(summaries, out / "audit_summary.csv")
    print(_dump(_stamp({"D": D, "N": int(z.shape[0]),
                        "max_abs": {str(k): s.max_abs for k, s in summaries.items()},
                        "count": {str(k): s.count for k, s in summaries.items()}}, config)))
    return EXIT_OK


def cmd_diagnose(config: RunConfig, samples: int, mi_tol: float = 0.01, tc_tol: float = 0.02) -> int:
    out = _output_dir(config)
    rep = xor_suite(samples, seed=config.seed, mi_tol=mi_tol, tc_tol=tc_tol)
    lines = [f"pairwise MI {pair}: {mi:.6f} (<= {mi_tol}) {'PASS' if mi <= mi_tol else 'FAIL'}"
             for pair, mi in rep["pairwise_mi"].items()]
    lines.append(f"total correlation: {rep['total_correlation']:.6f} (log 2 = {rep['log2']:.6f} "
                 f"+/- {tc_tol}) {'PASS' if rep['total_correlation_ok'] else 'FAIL'}")
    lines.append(f"overall: {'PASS' if rep['passed'] else 'FAIL'}")
    print("\n".join(lines))
    (out / "diagnose.json").write_text(_dump(_stamp({"samples": samples, **rep}, config)) + "\n")
    return EXIT_OK


def _fail(code: int, err: BaseException) -> int:
    print(_dump({"status": "error", "exit_code": code, "error": type(err).__name__, "message": str(err)}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = _resolve(args)
    except SystemExit as done:        # --help / --version
        return int(done.code or 0)
    except (UsageError, ConfigError) as err:
        return _fail(EXIT_USAGE, err)
    try:
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.data)
        if args.command == "moments":
            return cmd_moments(config, args.input, args.checkpoint)
        return cmd_diagnose(config, args.samples)
    except ConfigError as err:
        return _fail(EXIT_USAGE, err)
    except (DivergenceError, ValueError, OSError, ArithmeticError) as err:
        return _fail(EXIT_RUNTIME, err)


if __name__ == "__main__":
    sys.exit(main())
