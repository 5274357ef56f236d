"""Synthetic labeled vectors and the stochastic view pipeline.

Random streams are derived with ``np.random.default_rng([stream, seed, ...])``
so every draw is a pure function of the run seed plus its position (for
views: iteration and view index).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

_DATA_STREAM = 0x44415441
_VIEW_STREAM = 0x56494557
_SPLIT_STREAM = 0x53504C54


LAYOUTS = ("ring", "gaussian")


@dataclass(frozen=True)
class DataParams:
    """Generator settings.

    ``layout="gaussian"`` draws every prototype from a seeded Gaussian scaled
    by ``prototype_scale``. ``layout="ring"`` (the default task) puts
    ``n_classes * modes_per_class`` modes evenly on a circle of radius
    ``prototype_scale`` inside a random 2-D plane, with classes interleaved
    around the circle, so no class is linearly separable in input space.
    """

    n_samples: int = 2048
    n_classes: int = 4
    dim: int = 32
    prototype_scale: float = 3.0
    noise: float = 0.4
    modes_per_class: int = 3
    layout: str = "ring"
    seed: int | None = None     # None: inherit the run seed (0 when standalone)

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.dim < self.n_classes:
            raise ValueError("dim must be at least the number of classes")
        if self.modes_per_class < 1:
            raise ValueError("modes_per_class must be positive")
        if self.noise < 0 or self.prototype_scale <= 0:
            raise ValueError("noise must be >= 0 and prototype_scale > 0")


@dataclass
class SyntheticDataset:
    samples: np.ndarray
    labels: np.ndarray
    prototypes: np.ndarray      # (n_classes, modes_per_class, dim)
    params: DataParams | None = None

    def __len__(self) -> int:
        return len(self.labels)


def _ring_prototypes(rng, C, K, dim, radius):
    basis, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    j = np.arange(C * K)
    theta = 2 * np.pi * j / (C * K)
    points = radius * (np.cos(theta)[:, None] * basis[:, 0] + np.sin(theta)[:, None] * basis[:, 1])
    # mode j belongs to class j % C
    return points.reshape(K, C, dim).transpose(1, 0, 2)


def generate(params: DataParams = DataParams()) -> SyntheticDataset:
    """Gaussian clusters around seeded prototypes with balanced labels.

    With ``modes_per_class > 1`` each class is a union of clusters and samples
    are assigned round-robin to the modes of their class.
    """
    rng = np.random.default_rng([_DATA_STREAM, params.seed or 0])
    C, K = params.n_classes, params.modes_per_class
    if params.layout == "ring":
        protos = _ring_prototypes(rng, C, K, params.dim, params.prototype_scale)
    else:
        protos = params.prototype_scale * rng.standard_normal((C, K, params.dim))
    labels = np.arange(params.n_samples) % C
    modes = (np.arange(params.n_samples) // C) % K
    order = rng.permutation(params.n_samples)
    labels, modes = labels[order], modes[order]
    samples = protos[labels, modes] + params.noise * rng.standard_normal((params.n_samples, params.dim))
    return SyntheticDataset(samples, labels, protos, params)


def split(dataset: SyntheticDataset, test_fraction: float = 0.25, seed: int = 0):
    """Disjoint seeded train/test index arrays."""
    n = len(dataset)
    perm = np.random.default_rng([_SPLIT_STREAM, seed]).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass(frozen=True)
class ViewConfig:
    noise: float = 1.0
    mask_prob: float = 0.1
    gain: tuple[float, float] = (0.8, 1.2)
    T: int = 2
    seed: int | None = None

    def __post_init__(self):
        if not 0 <= self.mask_prob < 1:
            raise ValueError("mask_prob must lie in [0, 1)")
        if self.gain[0] > self.gain[1]:
            raise ValueError("gain range is reversed")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def make_view(batch: np.ndarray, config: ViewConfig, iteration: int, view: int) -> np.ndarray:
    """Per-sample gain, coordinate dropout, then additive Gaussian noise."""
    x = np.asarray(batch, dtype=np.float64)
    rng = np.random.default_rng([_VIEW_STREAM, config.seed or 0, int(iteration), int(view)])
    n, p = x.shape
    gain = rng.uniform(config.gain[0], config.gain[1], size=(n, 1))
    keep = rng.random((n, p)) >= config.mask_prob
    noise = rng.standard_normal((n, p))
    return gain * x * keep + config.noise * noise


def make_views(batch: np.ndarray, config: ViewConfig, iteration: int, T: int | None = None) -> list:
    return [make_view(batch, config, iteration, t) for t in range(config.T if T is None else T)]


def write_dataset_csv(dataset: SyntheticDataset, path) -> None:
    p = dataset.samples.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"feature_{i + 1}" for i in range(p)])
        for y, row in zip(dataset.labels, dataset.samples):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def read_dataset_csv(path) -> SyntheticDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or len(header) < 2:
            raise ValueError("dataset CSV must start with a 'label,feature_1..' header")
        labels, rows = [], []
        for line_no, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"line {line_no}: expected {len(header)} fields, got {len(rec)}")
            labels.append(int(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    samples = np.array(rows, dtype=np.float64).reshape(-1, len(header) - 1)
    return SyntheticDataset(samples, np.array(labels, dtype=np.int64), np.empty((0, 0, samples.shape[1])))
