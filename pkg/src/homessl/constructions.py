"""Batches with analytically known mixed moments.

``hadamard_batch`` takes columns of a Sylvester-Hadamard matrix, i.e.
characters of GF(2)^m. Products of distinct nontrivial characters whose
indices XOR to a nonzero value sum to zero, so with columns 1, 2, 4, 8 every
order-2 and order-3 moment vanishes exactly.

``xor_triple_batch`` enumerates (+-1, +-1) with the third column the product
of the first two: every pair is uncorrelated but the triple is not.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import hadamard


def hadamard_batch(order: int = 16, columns=(1, 2, 4, 8)) -> np.ndarray:
    return hadamard(order).astype(np.float64)[:, list(columns)]


def xor_triple_batch(repeat: int = 1) -> np.ndarray:
    signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)
    signs = np.tile(signs, (repeat, 1))
    return np.column_stack([signs, signs[:, 0] * signs[:, 1]])
