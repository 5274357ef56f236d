"""HOME loss: multi-view invariance plus mixed-moment redundancy.

All gradients are derived by hand. The loss is

    L = inv + lam * mean_u R_u

with ``inv = (1/D) * 2/(T(T-1)) * sum_{i != j} sum_d (1 - <zhat^i_d, zhat^j_d>)^2``
over ordered view pairs and ``R_u = (1/M_u) * sum_K sum_tuples m^2`` for each
redundancy unit ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .embedding import (DEFAULT_EPSILON, EmbeddingBatch, NormalizedBatch, normalize,
                        normalize_backward_array)
from .moments import CHUNK, MomentSpec, Sampled, count_combinations
from .parallel import map_ordered
from .variants import LossPlan, resolve_iteration

# Full orders 2 and 3 are evaluated through dense BLAS contractions up to this D.
DENSE_MAX_D = 128


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    orders: tuple[int, ...] = (2, 3)
    sampling: Sampled | None = None
    epsilon: float = DEFAULT_EPSILON
    threads: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class LossValue:
    total: float
    invariance_term: float
    redundancy_terms: list          # one per resolved redundancy unit
    redundancy_term: float          # mean of redundancy_terms
    gradient: list | None = None    # dL/dz for each raw view
    units: tuple = field(default=())


def _as_arrays(views):
    arrs = [v.values if isinstance(v, (NormalizedBatch, EmbeddingBatch)) else np.asarray(v, dtype=np.float64)
            for v in views]
    return arrs


def invariance_term(views: Sequence, pairs=None, need_grad: bool = True):
    """Invariance term over ordered view pairs and its gradient wrt each zhat.

    ``pairs`` defaults to every ordered pair ``(i, j), i != j``. Returns
    ``(value, grads)`` with ``grads[t]`` shaped like ``views[t]``.
    """
    zs = _as_arrays(views)
    T = len(zs)
    if T < 2:
        raise ValueError("invariance term needs at least two views")
    shape = zs[0].shape
    if any(z.shape != shape for z in zs):
        raise ValueError("views disagree on shape")
    if pairs is None:
        pairs = [(i, j) for i in range(T) for j in range(T) if i != j]
    D = shape[1]
    coef = 2.0 / (T * (T - 1)) / D
    value = 0.0
    grads = [np.zeros(shape) for _ in range(T)] if need_grad else None
    for i, j in pairs:
        resid = 1.0 - np.einsum("nd,nd->d", zs[i], zs[j])
        value += coef * float(np.sum(resid * resid))
        if need_grad:
            grads[i] -= 2.0 * coef * resid * zs[j]
            grads[j] -= 2.0 * coef * resid * zs[i]
    return value, grads


def _dense_order2(x1, x2, weight, need_grad):
    N, D = x1.shape
    C = (x1.T @ x2) / N
    W = np.triu(C, k=1)
    value = weight * float(np.sum(W * W))
    if not need_grad:
        return value, None
    coef = 2.0 * weight / N
    return value, [coef * (x2 @ W.T), coef * (x1 @ W)]


def _strict_upper3(D):
    a, b, c = np.ogrid[:D, :D, :D]
    return (a < b) & (b < c)


def _dense_order3(x1, x2, x3, weight, need_grad):
    N, D = x1.shape
    x12 = (x1[:, :, None] * x2[:, None, :]).reshape(N, D * D)
    T3 = (x12.T @ x3).reshape(D, D, D) / N
    W = np.where(_strict_upper3(D), T3, 0.0)
    value = weight * float(np.sum(W * W))
    if not need_grad:
        return value, None
    coef = 2.0 * weight / N
    x23 = (x2[:, :, None] * x3[:, None, :]).reshape(N, D * D)
    x13 = (x1[:, :, None] * x3[:, None, :]).reshape(N, D * D)
    g1 = x23 @ W.reshape(D, D * D).T
    g2 = x13 @ W.transpose(1, 0, 2).reshape(D, D * D).T
    g3 = x12 @ W.reshape(D * D, D)
    return value, [coef * g1, coef * g2, coef * g3]


def _gather_chunk(slot_t, tuples, weight, need_grad):
    K = tuples.shape[1]
    factors = [slot_t[k][tuples[:, k]] for k in range(K)]
    prod = factors[0]
    for f in factors[1:]:
        prod = prod * f
    N = prod.shape[1]
    m = prod.sum(axis=1) / N
    value = float(np.sum(m * m))
    if not need_grad:
        return value, None
    D = slot_t[0].shape[0]
    cols = np.arange(len(tuples))
    ones = np.ones(len(tuples))
    coef = (2.0 * weight / N) * m
    grads = []
    for j in range(K):
        rest = coef[:, None]
        for k in range(K):
            if k != j:
                rest = rest * factors[k]
        scatter = sp.csr_matrix((ones, (tuples[:, j], cols)), shape=(D, len(tuples)))
        grads.append(np.asarray(scatter @ rest).T)
    return value, grads


def _gather_sum(slots, tuples, weight, need_grad, threads):
    slot_t = [np.ascontiguousarray(s.T) for s in slots]
    chunks = [tuples[i:i + CHUNK] for i in range(0, len(tuples), CHUNK)]
    parts = map_ordered(lambda c: _gather_chunk(slot_t, c, weight, need_grad), chunks, threads)
    value = weight * math.fsum(p[0] for p in parts)
    if not need_grad:
        return value, None
    grads = [np.zeros_like(s) for s in slots]
    for _, g in parts:
        for k in range(len(slots)):
            grads[k] += g[k]
    return value, grads


def redundancy_term(batches, config: LossConfig = LossConfig(), orders=None,
                    salt: tuple = (), need_grad: bool = True):
    """Redundancy term of one unit and its gradient wrt each distinct input.

    ``batches`` is one normalized matrix (self unit: every slot reads it) or a
    sequence with one matrix per tuple slot (cross unit, length equal to
    every order). Returns ``(value, grads)`` where ``grads`` aligns with the
    distinct inputs given. With sampling, each order's mean squared moment is
    rescaled by ``C(D, K) / M``, which is unbiased for the full value.
    """
    if isinstance(batches, (NormalizedBatch, EmbeddingBatch, np.ndarray)):
        inputs = _as_arrays([batches])
    else:
        inputs = _as_arrays(batches)
    N, D = inputs[0].shape
    if any(x.shape != (N, D) for x in inputs):
        raise ValueError("slot batches disagree on shape")
    orders = tuple(sorted(set(config.orders if orders is None else orders)))
    M = count_combinations(D, orders)
    spec = MomentSpec(D, orders, config.sampling)
    value = 0.0
    grads = [np.zeros((N, D)) for _ in inputs] if need_grad else None
    for K in orders:
        if len(inputs) == 1:
            slot_ids = [0] * K
        elif len(inputs) == K:
            slot_ids = list(range(K))
        else:
            raise ValueError(f"{len(inputs)} slot batches given for order {K}")
        slots = [inputs[s] for s in slot_ids]
        if spec.sampling is None:
            weight = 1.0 / M
            if K == 2 and D <= DENSE_MAX_D:
                v, g = _dense_order2(*slots, weight, need_grad)
            elif K == 3 and D <= DENSE_MAX_D:
                v, g = _dense_order3(*slots, weight, need_grad)
            else:
                v, g = _gather_sum(slots, spec.tuples(K), weight, need_grad, config.threads)
        else:
            count = spec.sampling.per_order_count[K]
            weight = math.comb(D, K) / (M * count)
            v, g = _gather_sum(slots, spec.tuples(K, *salt), weight, need_grad, config.threads)
        value += v
        if need_grad:
            for s, gk in zip(slot_ids, g):
                grads[s] += gk
    return value, grads


def home_loss(views: Sequence, plan: LossPlan, config: LossConfig = LossConfig(),
              iteration: int = 0, need_grad: bool = True) -> LossValue:
    """Normalize each raw view, evaluate both terms per ``plan`` and chain to raw z."""
    if len(views) != plan.T:
        raise ValueError(f"plan {plan.name} expects {plan.T} views, got {len(views)}")
    raw = [v if isinstance(v, EmbeddingBatch) else EmbeddingBatch(v, t + 1) for t, v in enumerate(views)]
    normed = [normalize(b, config.epsilon) for b in raw]
    shape = normed[0].values.shape
    if any(b.values.shape != shape for b in normed):
        raise ValueError("views disagree on shape")

    inv, inv_grads = invariance_term(normed, plan.invariance_pairs, need_grad)
    units = resolve_iteration(plan, iteration)
    terms = []
    grads = inv_grads
    scale = config.lam / len(units) if units else 0.0
    for u_index, unit in enumerate(units):
        if len(unit.views) == 1:
            inputs = normed[unit.views[0]]
        else:
            inputs = [normed[v] for v in unit.views]
        r, r_grads = redundancy_term(inputs, config, unit.orders, (iteration, u_index), need_grad)
        terms.append(r)
        if need_grad and scale:
            distinct = unit.views if len(unit.views) > 1 else unit.views[:1]
            for v, g in zip(distinct, r_grads):
                grads[v] += scale * g
    red = float(np.mean(terms)) if terms else 0.0
    total = inv + config.lam * red
    out_grads = None
    if need_grad:
        out_grads = [normalize_backward_array(b.values, b.scale, b.degenerate, g)
                     for b, g in zip(normed, grads)]
    return LossValue(total, inv, terms, red, out_grads, units)
