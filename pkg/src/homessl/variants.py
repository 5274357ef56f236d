"""Declarative loss plans for the five model variants.

A plan lists the ordered view pairs that feed the invariance term and the
redundancy units. A unit reads one view for every tuple slot (self unit,
``views`` of length 1), one view per slot (cross unit, ``views`` of length K
for its single order K), or a view drawn per iteration (``views is None``).
View indices are 0-based.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

VARIANTS = ("BarlowTwinsCross", "T3-O2-Cross", "T3-O3-Cross", "T2-O3-Self-All", "T2-O3-Self-One")
_PLAN_STREAM = 0x504C414E


@dataclass(frozen=True)
class RedundancyUnit:
    orders: tuple[int, ...]
    views: tuple[int, ...] | None

    @property
    def is_self(self) -> bool:
        return self.views is None or len(self.views) == 1


@dataclass(frozen=True)
class LossPlan:
    name: str
    T: int
    invariance_pairs: tuple[tuple[int, int], ...]
    units: tuple[RedundancyUnit, ...]
    seed: int = 0

    def __post_init__(self):
        for i, j in self.invariance_pairs:
            if not (0 <= i < self.T and 0 <= j < self.T) or i == j:
                raise ValueError(f"bad invariance pair ({i}, {j}) for T={self.T}")
        for u in self.units:
            if u.views is not None:
                if any(not 0 <= v < self.T for v in u.views):
                    raise ValueError(f"unit {u} references a view outside 0..{self.T - 1}")
                if len(u.views) > 1 and (len(u.orders) != 1 or u.orders[0] != len(u.views)):
                    raise ValueError(f"cross unit {u} must have a single order equal to its slot count")


def canonical_name(name: str) -> str:
    key = name.strip()
    if key.upper().startswith("HOME-"):
        key = key[5:]
    for v in VARIANTS:
        if v.lower() == key.lower():
            return v
    raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")


def _ordered_pairs(T):
    return tuple((i, j) for i, j in itertools.permutations(range(T), 2))


def build_plan(name: str, rng_seed: int = 0) -> LossPlan:
    name = canonical_name(name)
    if name == "BarlowTwinsCross":
        units = (RedundancyUnit((2,), (0, 1)),)
        T = 2
    elif name == "T3-O2-Cross":
        T = 3
        units = tuple(RedundancyUnit((2,), p) for p in itertools.combinations(range(3), 2))
    elif name == "T3-O3-Cross":
        T = 3
        units = tuple(RedundancyUnit((2,), p) for p in itertools.combinations(range(3), 2))
        units += (RedundancyUnit((3,), (0, 1, 2)),)
    elif name == "T2-O3-Self-All":
        T = 2
        units = (RedundancyUnit((2, 3), (0,)), RedundancyUnit((2, 3), (1,)))
    else:
        T = 2
        units = (RedundancyUnit((2, 3), None),)
    return LossPlan(name, T, _ordered_pairs(T), units, int(rng_seed))


def resolve_iteration(plan: LossPlan, iteration: int) -> tuple[RedundancyUnit, ...]:
    """Concrete units for one iteration; random view choices depend only on (seed, iteration)."""
    out = []
    for u_index, u in enumerate(plan.units):
        if u.views is None:
            rng = np.random.default_rng([_PLAN_STREAM, plan.seed, int(iteration), u_index])
            out.append(RedundancyUnit(u.orders, (int(rng.integers(plan.T)),)))
        else:
            out.append(u)
    return tuple(out)
