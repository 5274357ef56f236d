"""Run configuration: an INI-style file with fixed sections, plus overrides.

Grammar (read with :mod:`configparser`, interpolation off)::

    [section]
    key = value        # integers, floats, names, or comma-separated lists

Sections and keys are listed in ``SCHEMA``. Unknown sections or keys are
rejected, as are values that fail to parse. Every key is optional; missing
keys keep their defaults. Overrides use the same ``section.key=value`` form
and win over the file.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

from .data import DataParams, ViewConfig
from .loss import LossConfig
from .moments import MomentSpec, Sampled
from .trainer import TrainConfig
from .variants import canonical_name


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to a usage error."""


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


SCHEMA = {
    "run": {"variant": str, "seed": int, "threads": int, "output_dir": str},
    "model": {"encoder_widths": _ints, "proj_dim": int},
    "data": {"n_samples": int, "n_classes": int, "dim": int, "prototype_scale": float,
             "noise": float, "modes_per_class": int, "layout": str, "seed": _opt_int},
    "views": {"noise": float, "mask_prob": float, "gain": _floats, "seed": _opt_int},
    "loss": {"lam": float, "epsilon": float, "sample_order2": _opt_int,
             "sample_order3": _opt_int, "sample_seed": int},
    "train": {"batch_size": int, "epochs": int, "base_lr": float, "final_lr": float,
              "warmup_epochs": int, "momentum": float, "weight_decay": float,
              "test_fraction": float},
    "probe": {"iterations": int, "lr": float},
    "audit": {"orders": _ints, "sample_order2": _opt_int, "sample_order3": _opt_int,
              "sample_seed": int, "bins": int},
}


@dataclass(frozen=True)
class ProbeConfig:
    iterations: int = 500
    lr: float = 0.1


@dataclass(frozen=True)
class AuditConfig:
    orders: tuple[int, ...] = (2, 3)
    samples: dict = field(default_factory=dict)    # order -> count; missing means full
    sample_seed: int = 0
    bins: int = 20

    def sampling(self, D: int) -> Sampled | None:
        """Sampling spec for ``D`` features; orders without a count are fully enumerated."""
        if not self.samples:
            return None
        counts = {k: self.samples.get(k, math.comb(D, k)) for k in self.orders}
        return Sampled(counts, self.sample_seed)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    probe: ProbeConfig = ProbeConfig()
    audit: AuditConfig = AuditConfig()
    output_dir: str | None = None

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def threads(self) -> int:
        return self.train.loss.threads

    def as_dict(self) -> dict:
        """Resolved values that determine results (the output directory is excluded)."""
        d = {"train": asdict(self.train), "probe": asdict(self.probe), "audit": asdict(self.audit)}
        d["audit"]["samples"] = {str(k): v for k, v in sorted(self.audit.samples.items())}
        sampling = self.train.loss.sampling
        if sampling is not None:
            d["train"]["loss"]["sampling"] = {
                "per_order_count": {str(k): v for k, v in sorted(sampling.per_order_count.items())},
                "seed": sampling.seed,
            }
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_override(text: str) -> tuple[str, str, str]:
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    return section, name, value.strip()


def _raw_values(path, overrides):
    raw = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as err:
            raise ConfigError(f"cannot parse {path}: {err}") from err
        for section in parser.sections():
            for key, value in parser.items(section):
                raw[(section, key)] = value
    for section, key, value in overrides:
        raw[(section, key)] = value
    values = {}
    for (section, key), text in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            values[(section, key)] = SCHEMA[section][key](text)
        except ValueError as err:
            raise ConfigError(f"bad value for {section}.{key}: {text!r}") from err
    return values


def _section(values, name):
    return {k: v for (s, k), v in values.items() if s == name}


def _pop_samples(section):
    """Remove the ``sample_orderK`` keys and return ``{K: count}`` for those set."""
    counts = {k: section.pop(f"sample_order{k}", None) for k in (2, 3)}
    return {k: c for k, c in counts.items() if c is not None}


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a validated :class:`RunConfig` from an optional file and overrides.

    ``overrides`` is a sequence of ``(section, key, value_text)``.
    """
    values = _raw_values(path, overrides)
    try:
        run = _section(values, "run")
        model = _section(values, "model")
        train = _section(values, "train")
        loss = _section(values, "loss")
        loss_samples = _pop_samples(loss)
        sample_seed = loss.pop("sample_seed", 0)
        sampling = None
        if loss_samples:
            D = model.get("proj_dim", TrainConfig.proj_dim)
            sampling = Sampled({k: loss_samples.get(k, math.comb(D, k)) for k in (2, 3)}, sample_seed)
        views = _section(values, "views")
        if "gain" in views:
            if len(views["gain"]) != 2:
                raise ConfigError("views.gain takes two comma-separated numbers")
        tc = TrainConfig(
            variant=canonical_name(run.get("variant", TrainConfig.variant)),
            seed=run.get("seed", 0),
            loss=LossConfig(threads=run.get("threads", 1), sampling=sampling, **loss),
            data=DataParams(**_section(values, "data")),
            views=ViewConfig(**views),
            **model, **train,
        )
        audit = _section(values, "audit")
        ac = AuditConfig(samples=_pop_samples(audit), **audit)
        if tc.loss.threads < 1:
            raise ConfigError("threads must be >= 1")
        if sampling is not None:
            MomentSpec(tc.proj_dim, (2, 3), sampling)
        return RunConfig(tc, ProbeConfig(**_section(values, "probe")), ac, run.get("output_dir"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def with_overrides(config: RunConfig, *, variant=None, seed=None, lr=None, threads=None,
                   output_dir=None) -> RunConfig:
    """Apply the dedicated CLI flags; they win over file values.

    ``lr`` sets the base rate and caps the final rate, so ``lr=0`` freezes
    the parameters for the whole schedule.
    """
    train = config.train
    try:
        if variant is not None:
            train = replace(train, variant=canonical_name(variant))
        if seed is not None:
            train = replace(train, seed=seed)
        if lr is not None:
            train = replace(train, base_lr=lr, final_lr=min(train.final_lr, lr))
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be >= 1")
            train = replace(train, loss=replace(train.loss, threads=threads))
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return replace(config, train=train, output_dir=output_dir or config.output_dir)
