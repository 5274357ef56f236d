"""Feature-index combinations and empirical mixed moments.

Index tuples are 0-based and strictly increasing inside the library; the CSV
format writes them 1-based. A mixed moment of columns ``v_1..v_K`` is
``(1/N) * sum_n prod_k v_k[n]``.
"""

from __future__ import annotations

import csv
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .embedding import NormalizedBatch
from .parallel import map_ordered

# Tuples per work unit in the gather path; bounds temporaries to ~CHUNK*N doubles.
CHUNK = 2048


def count_combinations(D: int, orders) -> int:
    """Exact ``sum_{K in orders} C(D, K)``; Python ints never wrap."""
    orders = sorted(set(int(k) for k in orders))
    if not orders:
        raise ValueError("orders must be non-empty")
    for k in orders:
        if not 2 <= k <= D:
            raise ValueError(f"order {k} outside 2..{D}")
    return sum(math.comb(D, k) for k in orders)


def enumerate_tuples(D: int, K: int) -> Iterator[tuple[int, ...]]:
    """Yield every strictly increasing K-tuple over ``range(D)`` in lexicographic order."""
    if not 2 <= K <= D:
        raise ValueError(f"order {K} outside 2..{D}")
    return itertools.combinations(range(D), K)


def all_tuples(D: int, K: int) -> np.ndarray:
    """All K-combinations as an int array of shape (C(D, K), K)."""
    n = math.comb(D, K)
    flat = np.fromiter(itertools.chain.from_iterable(enumerate_tuples(D, K)),
                       dtype=np.intp, count=n * K)
    return flat.reshape(n, K)


def rank_tuple(indices: Sequence[int], D: int) -> int:
    """Lexicographic rank of a strictly increasing tuple among all K-combinations of range(D)."""
    K = len(indices)
    rank = 0
    prev = -1
    for i, x in enumerate(indices):
        k = K - i
        # combinations whose i-th element lies strictly between prev and x
        rank += math.comb(D - prev - 1, k) - math.comb(D - x, k)
        prev = x
    return rank


def unrank_tuple(rank: int, D: int, K: int) -> tuple[int, ...]:
    total = math.comb(D, K)
    if not 0 <= rank < total:
        raise ValueError(f"rank {rank} outside 0..{total - 1}")
    out = []
    start = 0
    for i in range(K):
        k = K - i
        # smallest x >= start such that the block of tuples starting at x contains rank;
        # tuples with first element < x number comb(D-start, k) - comb(D-x, k)
        remaining = math.comb(D - start, k)
        lo, hi = start, D - k
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if remaining - math.comb(D - mid, k) <= rank:
                lo = mid
            else:
                hi = mid - 1
        rank -= remaining - math.comb(D - lo, k)
        out.append(lo)
        start = lo + 1
    return tuple(out)


def sample_tuples(D: int, K: int, count: int, seed: int) -> list[tuple[int, ...]]:
    """Uniform sample of ``count`` distinct K-combinations, sorted lexicographically."""
    total = math.comb(D, K) if 2 <= K <= D else 0
    if total == 0:
        raise ValueError(f"order {K} outside 2..{D}")
    if not 1 <= count <= total:
        raise ValueError(f"count {count} outside 1..C({D},{K})={total}")
    ranks = random.Random(seed).sample(range(total), count)
    ranks.sort()
    return [unrank_tuple(r, D, K) for r in ranks]


def derive_seed(*parts: int) -> int:
    """Mix integers into one 64-bit seed (independent stream per distinct key)."""
    state = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]).generate_state(2)
    return (int(state[0]) << 32) | int(state[1])


def mixed_moment(columns: Sequence[np.ndarray]) -> float:
    """``(1/N) sum_n prod_k columns[k][n]``.

    Factors are sorted per row before multiplying and the row products are
    summed with ``math.fsum``, so the result does not depend on column order.
    """
    cols = [np.asarray(c, dtype=np.float64) for c in columns]
    if not cols:
        raise ValueError("need at least one column")
    n = cols[0].shape[0]
    if any(c.ndim != 1 or c.shape[0] != n for c in cols):
        raise ValueError("columns must be 1-D and of equal length")
    if n < 1:
        raise ValueError("columns must be non-empty")
    stacked = np.stack(cols)
    if not np.all(np.isfinite(stacked)):
        raise ValueError("columns contain non-finite values")
    stacked.sort(axis=0)
    prod = stacked[0].copy()
    for row in stacked[1:]:
        prod *= row
    return math.fsum(prod) / n


def _gather_chunk(slot_t, tuples):
    prod = slot_t[0][tuples[:, 0]]
    for k in range(1, tuples.shape[1]):
        prod = prod * slot_t[k][tuples[:, k]]
    # rows are contiguous, so numpy reduces each with pairwise summation
    return prod.sum(axis=1) / prod.shape[1]


def tuple_moments(slots: Sequence[np.ndarray], tuples: np.ndarray, threads: int = 1) -> np.ndarray:
    """Moments for many tuples at once.

    ``slots[k]`` is the (N, D) matrix read by tuple position k; ``tuples`` has
    shape (M, K) with ``K == len(slots)``.
    """
    tuples = np.asarray(tuples, dtype=np.intp).reshape(-1, len(slots))
    slot_t = [np.ascontiguousarray(np.asarray(s, dtype=np.float64).T) for s in slots]
    chunks = [tuples[i:i + CHUNK] for i in range(0, len(tuples), CHUNK)]
    if not chunks:
        return np.zeros(0)
    parts = map_ordered(lambda c: _gather_chunk(slot_t, c), chunks, threads)
    return np.concatenate(parts)


@dataclass(frozen=True)
class Sampled:
    per_order_count: dict
    seed: int = 0


@dataclass(frozen=True)
class MomentSpec:
    D: int
    orders: tuple[int, ...] = (2, 3)
    sampling: Sampled | None = None

    def __post_init__(self):
        orders = tuple(sorted(set(int(k) for k in self.orders)))
        object.__setattr__(self, "orders", orders)
        count_combinations(self.D, orders)
        if self.sampling is not None:
            for k in orders:
                c = self.sampling.per_order_count.get(k)
                if c is None or not 1 <= c <= math.comb(self.D, k):
                    raise ValueError(f"sample count for order {k} must lie in 1..C({self.D},{k})")

    @property
    def M(self) -> int:
        return count_combinations(self.D, self.orders)

    def tuples(self, K: int, *salt: int) -> np.ndarray:
        """Tuples evaluated at order K: all of them, or a seeded sample."""
        if self.sampling is None:
            return all_tuples(self.D, K)
        seed = derive_seed(self.sampling.seed, K, *salt)
        picked = sample_tuples(self.D, K, self.sampling.per_order_count[K], seed)
        return np.array(picked, dtype=np.intp).reshape(-1, K)


@dataclass
class MomentReport:
    spec: MomentSpec
    entries: list = field(default_factory=list)   # (tuple, moment)
    views: list = field(default_factory=list)     # view ids per slot, one per entry

    def by_order(self) -> dict:
        out: dict = {}
        for idx, m in self.entries:
            out.setdefault(len(idx), []).append(m)
        return {k: np.array(v) for k, v in out.items()}

    def max_abs(self) -> float:
        return max((abs(m) for _, m in self.entries), default=0.0)


def moment_report(batches, spec: MomentSpec, threads: int = 1) -> MomentReport:
    """Evaluate every tuple selected by ``spec``.

    ``batches`` is a single NormalizedBatch (every slot reads it) or a
    sequence with one batch per tuple slot, whose length must equal every
    order in the spec.
    """
    if isinstance(batches, NormalizedBatch):
        batches = [batches]
    batches = list(batches)
    n = batches[0].n_samples
    if any(b.n_samples != n for b in batches):
        raise ValueError("batches disagree on the number of samples")
    if any(b.n_features != spec.D for b in batches):
        raise ValueError("batch feature count does not match spec.D")
    report = MomentReport(spec)
    for K in spec.orders:
        if len(batches) == 1:
            slot_batches = batches * K
        elif len(batches) == K:
            slot_batches = batches
        else:
            raise ValueError(f"{len(batches)} slot batches given for order {K}")
        tuples = spec.tuples(K)
        values = tuple_moments([b.values for b in slot_batches], tuples, threads)
        views = tuple(b.view_id for b in slot_batches)
        for idx, m in zip(tuples, values):
            report.entries.append((tuple(int(i) for i in idx), float(m)))
            report.views.append(views)
    return report


def write_report_csv(report: MomentReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["order", "indices", "views", "moment"])
        for (idx, m), views in zip(report.entries, report.views):
            w.writerow([len(idx), ":".join(str(i + 1) for i in idx),
                        ":".join(str(v) for v in views), repr(float(m))])


def read_report_csv(path) -> list[tuple[tuple[int, ...], tuple[int, ...], float]]:
    """Rows of a report CSV as ``(indices0, views, moment)``; indices back to 0-based."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            idx = tuple(int(s) - 1 for s in row["indices"].split(":"))
            if len(idx) != int(row["order"]):
                raise ValueError(f"order/indices mismatch in row {row}")
            views = tuple(int(s) for s in row["views"].split(":"))
            rows.append((idx, views, float(row["moment"])))
    return rows
