"""Linear probing, plug-in total correlation and post-training moment audits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingBatch, NormalizedBatch, normalize
from .moments import MomentSpec, moment_report

MAX_TC_VARIABLES = 4
MAX_ALPHABET = 8


@dataclass
class ProbeResult:
    accuracy: float
    per_class_accuracy: dict
    n_train: int
    n_test: int
    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    train_accuracy: float = float("nan")

    def record(self) -> dict:
        return {
            "top1_accuracy": self.accuracy,
            "train_accuracy": self.train_accuracy,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def _softmax(logits):
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(train_x, train_y, test_x, test_y, iterations: int = 500, lr: float = 0.1,
                 standardize: bool = True) -> ProbeResult:
    """Multinomial logistic regression by full-batch gradient descent on frozen features.

    Features are standardized with training-split statistics unless
    ``standardize`` is False. Weights start at zero, so the result is
    deterministic.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    classes = np.unique(train_y)
    if len(classes) < 2:
        raise ValueError("linear probe needs at least two classes in the training split")
    n_classes = int(max(train_y.max(), test_y.max() if len(test_y) else 0)) + 1
    if standardize:
        mu = train_x.mean(axis=0)
        sd = train_x.std(axis=0)
        sd[sd < 1e-12] = 1.0
        train_x = (train_x - mu) / sd
        test_x = (test_x - mu) / sd
    n, p = train_x.shape
    onehot = np.eye(n_classes)[train_y]
    W = np.zeros((p, n_classes))
    b = np.zeros(n_classes)
    for _ in range(iterations):
        err = _softmax(train_x @ W + b) - onehot
        W -= lr * (train_x.T @ err) / n
        b -= lr * err.mean(axis=0)
    pred = np.argmax(test_x @ W + b, axis=1)
    train_pred = np.argmax(train_x @ W + b, axis=1)
    per_class = {int(c): float(np.mean(pred[test_y == c] == c)) for c in np.unique(test_y)}
    return ProbeResult(float(np.mean(pred == test_y)), per_class, n, len(test_y), W, b,
                       float(np.mean(train_pred == train_y)))


@dataclass
class TCEstimate:
    value: float
    alphabet_sizes: tuple
    n_variables: int
    n_samples: int


def entropy_discrete(samples: np.ndarray) -> float:
    """Plug-in joint entropy (nats) of the rows of an integer matrix."""
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    _, counts = np.unique(samples, axis=0, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def _check_discrete(samples):
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.size == 0 or samples.shape[0] == 0:
        raise ValueError("empty input")
    if not np.issubdtype(samples.dtype, np.integer):
        raise ValueError("expected small-alphabet integer samples")
    return samples


def total_correlation_discrete(samples) -> TCEstimate:
    """``sum_d H(Z_d) - H(Z_1..Z_D)`` from empirical frequencies."""
    samples = _check_discrete(samples)
    n, d = samples.shape
    if d > MAX_TC_VARIABLES:
        raise ValueError(f"at most {MAX_TC_VARIABLES} variables supported")
    sizes = tuple(int(len(np.unique(samples[:, j]))) for j in range(d))
    if max(sizes) > MAX_ALPHABET:
        raise ValueError(f"alphabet larger than {MAX_ALPHABET}")
    marginals = math.fsum(entropy_discrete(samples[:, j]) for j in range(d))
    return TCEstimate(marginals - entropy_discrete(samples), sizes, d, n)


def mutual_information_discrete(x, y) -> float:
    return total_correlation_discrete(np.column_stack([np.asarray(x), np.asarray(y)])).value


def xor_samples(n: int, seed: int = 0) -> np.ndarray:
    """Fair independent bits Z1, Z2 and Z3 = Z1 xor Z2, shape (n, 3)."""
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, size=(n, 2))
    return np.column_stack([z, z[:, 0] ^ z[:, 1]])


def xor_suite(n: int = 10_000, seed: int = 0, mi_tol: float = 0.01, tc_tol: float = 0.02) -> dict:
    """Pairwise MI near zero yet total correlation near log 2 on the XOR triple."""
    z = xor_samples(n, seed)
    pairs = {f"{i + 1}-{j + 1}": mutual_information_discrete(z[:, i], z[:, j])
             for i in range(3) for j in range(i + 1, 3)}
    tc = total_correlation_discrete(z).value
    pair_ok = all(v <= mi_tol for v in pairs.values())
    tc_ok = abs(tc - math.log(2)) <= tc_tol
    return {
        "n_samples": n,
        "seed": seed,
        "pairwise_mi": pairs,
        "total_correlation": tc,
        "log2": math.log(2),
        "pairwise_mi_ok": pair_ok,
        "total_correlation_ok": tc_ok,
        "passed": pair_ok and tc_ok,
    }


@dataclass
class OrderSummary:
    order: int
    count: int
    max_abs: float
    mean_abs: float
    histogram: np.ndarray
    bin_edges: np.ndarray


def moment_audit(embeddings, spec: MomentSpec, epsilon: float = 1e-12, bins: int = 20,
                 threads: int = 1):
    """Normalize ``embeddings`` and summarize |moment| per order.

    Returns ``(summaries, report)``; ``summaries`` maps order to OrderSummary.
    """
    if isinstance(embeddings, NormalizedBatch):
        batch = embeddings
    else:
        if not isinstance(embeddings, EmbeddingBatch):
            embeddings = EmbeddingBatch(embeddings)
        batch = normalize(embeddings, epsilon)
    report = moment_report(batch, spec, threads)
    summaries = {}
    for k, vals in report.by_order().items():
        a = np.abs(vals)
        top = float(a.max()) if len(a) else 0.0
        hist, edges = np.histogram(a, bins=bins, range=(0.0, top if top > 0 else 1.0))
        summaries[k] = OrderSummary(k, len(a), top, float(a.mean()), hist, edges)
    return summaries, report


def write_audit_csv(summaries: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "count", "max_abs", "mean_abs", "histogram"])
        for k in sorted(summaries):
            s = summaries[k]
            w.writerow([k, s.count, repr(s.max_abs), repr(s.mean_abs), ":".join(str(int(c)) for c in s.histogram)])
