"""Embedding batches and column normalization with its exact backward map.

Each column of a batch is centered and divided by its centered L2 norm, so
normalized columns have zero mean and unit *norm* (not unit standard
deviation). This is what makes the invariance target ``sum_n z_i z_j = 1``
reachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPSILON = 1e-12
# A column whose centered norm is at most this multiple of sqrt(epsilon)
# is treated as constant.
DEGENERATE_FACTOR = 10.0


@dataclass
class EmbeddingBatch:
    """Raw projector outputs for one view: ``values`` has shape (N, D)."""

    values: np.ndarray
    view_id: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"expected an (N, D) matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding batch contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass
class NormalizedBatch:
    values: np.ndarray
    view_id: int
    source: EmbeddingBatch | None = None
    degenerate: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.degenerate is None:
            self.degenerate = np.zeros(self.values.shape[1], dtype=bool)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


def normalize_array(z: np.ndarray, epsilon: float = DEFAULT_EPSILON):
    """Normalize the columns of ``z``.

    Returns ``(zhat, scale, degenerate)`` where ``scale`` is the per-column
    denominator ``sqrt(sum_n c_nd**2 + epsilon)`` and ``degenerate`` flags
    columns that were (numerically) constant. Degenerate columns come back as
    zeros.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected an (N, D) matrix, got shape {z.shape}")
    if z.shape[0] < 2:
        raise ValueError("normalization needs at least two samples")
    if not np.all(np.isfinite(z)):
        raise ValueError("embedding batch contains non-finite values")
    centered = z - z.mean(axis=0)
    sq = np.einsum("nd,nd->d", centered, centered)
    degenerate = np.sqrt(sq) <= DEGENERATE_FACTOR * np.sqrt(epsilon)
    scale = np.sqrt(sq + epsilon)
    zhat = centered / scale
    zhat[:, degenerate] = 0.0
    return zhat, scale, degenerate


def normalize_backward_array(zhat, scale, degenerate, upstream):
    """Pull ``dL/dzhat`` back to ``dL/dz`` for one normalized matrix."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != zhat.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match batch {zhat.shape}")
    # d zhat / d centered = (I - zhat zhat^T) / scale, then remove the mean
    proj = np.einsum("nd,nd->d", zhat, upstream)
    grad_c = (upstream - zhat * proj) / scale
    grad = grad_c - grad_c.mean(axis=0)
    grad[:, degenerate] = 0.0
    return grad


def normalize(batch: EmbeddingBatch, epsilon: float = DEFAULT_EPSILON) -> NormalizedBatch:
    if not isinstance(batch, EmbeddingBatch):
        batch = EmbeddingBatch(batch)
    zhat, scale, degenerate = normalize_array(batch.values, epsilon)
    return NormalizedBatch(zhat, batch.view_id, batch, degenerate, scale)


def normalize_backward(batch: EmbeddingBatch, upstream: np.ndarray,
                       epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Return ``dL/dz`` for a raw batch given ``dL/dzhat``."""
    values = batch.values if isinstance(batch, EmbeddingBatch) else np.asarray(batch, dtype=np.float64)
    if np.shape(upstream) != values.shape:
        raise ValueError(f"upstream shape {np.shape(upstream)} does not match batch {values.shape}")
    zhat, scale, degenerate = normalize_array(values, epsilon)
    return normalize_backward_array(zhat, scale, degenerate, upstream)
