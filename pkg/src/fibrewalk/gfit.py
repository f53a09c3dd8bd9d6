"""Estimating the neighbour-order distribution g by repeated exploration.

For a random table n* and a random free-cell order, the largest prefix
length s whose pinning still leaves room for another table is bracketed by
bisection on rounded LP bounds (``binary_search_sb``) and then confirmed by
sampling completions (``refine_s``).  Counters G(1..F) start at one and the
counter G(s) is bumped per draw; g(j) = G(j + 1) / sum(G), so the mass of
s lands on M = s - 1 (s = 0 is folded into G(1)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .bounds import ReferenceSet
from .linalg import RrefSystem
from .mcmc import GDistribution
from .samplers import kind_code

RETRIES = 50
MAX_TABLE_ATTEMPTS = 10_000


class SingletonFiber(ValueError):
    """The fiber holds a single table, so no neighbour order is defined."""


def _require_neighbours(rs: ReferenceSet) -> None:
    if rs.n_free == 0 or rs.n_sampling == 0:
        raise SingletonFiber("the reference set contains exactly one table")


def binary_search_sb(rs: ReferenceSet, r: RrefSystem, table: np.ndarray) -> int:
    """Bisection bracket s_b for ``table`` under the free-cell order of ``r``.

    At s_b + 1 every later free cell has coinciding rounded bounds once the
    first s_b + 1 free cells are pinned; at s_b at least one does not.
    """
    _require_neighbours(rs)
    nstar = rs.sub(table)
    T, beta, basis, pos = K.float_tableau(r.num, r.rhs, r.den, r.bound, rs.n_sampling)
    sb, _ = K.binary_search_sb(T, beta, basis, pos, rs.lower, rs.upper, r.free, nstar)
    return int(sb)


def refine_s(rs: ReferenceSet, r: RrefSystem, table: np.ndarray, sb: int, rng: np.random.Generator,
             kind: str = "reciprocal", retries: int = RETRIES) -> int:
    """Largest s <= sb at which a sampled completion differs from ``table`` (0 if none found)."""
    nstar = rs.sub(table)
    s, _ = K.refine_s(rng, r.num, r.rhs, r.den, r.bound, r.free, rs.lower, rs.upper, nstar, int(sb),
                      kind_code(kind), rs.log_factorials, retries)
    return int(s)


@dataclass
class ExplorationRecord:
    s_counts: np.ndarray  # how often each s = 0..F-1 was returned
    i_max: int
    table_attempts: int
    lp_solves: int
    mean_sb: float
    mean_s: float

    @property
    def counters(self) -> np.ndarray:
        """G(1..F) stored at positions 0..F-1: all-ones start, s added at G(max(s, 1))."""
        G = np.ones(self.s_counts.size, np.int64)
        G[0] += self.s_counts[0]
        G[: -1] += self.s_counts[1:]
        return G

    def distribution(self) -> GDistribution:
        """g(j) = G(j + 1) / sum(G) for j = 0..F-1."""
        return GDistribution.from_counts(self.counters)


def explore(rs: ReferenceSet, i_max: int, rng: np.random.Generator, kind: str = "uniform",
            retries: int = RETRIES, max_attempts: int = MAX_TABLE_ATTEMPTS) -> ExplorationRecord:
    """Run ``i_max`` explorations and return the raw counter record."""
    if i_max < 1:
        raise ValueError("i_max must be at least 1")
    _require_neighbours(rs)
    counts = np.zeros(rs.n_free, np.int64)
    stats = np.zeros(5, np.int64)
    A = np.ascontiguousarray(rs.reduced.A)
    b = np.ascontiguousarray(rs.reduced.b)
    status = K.estimate_g(rng, A, b, rs.lower, rs.upper, rs.observed_sub, kind_code(kind), rs.log_factorials,
                          i_max, retries, max_attempts, counts, stats)
    if status != 0:
        raise RuntimeError(f"no table sampled within {max_attempts} attempts")
    done = max(int(stats[0]), 1)
    return ExplorationRecord(counts, i_max, int(stats[1]), int(stats[2]), stats[3] / done, stats[4] / done)


def estimate_g(rs: ReferenceSet, i_max: int, rng: np.random.Generator, kind: str = "uniform") -> GDistribution:
    """Estimated g; see :attr:`ExplorationRecord.counters` for the indexing."""
    return explore(rs, i_max, rng, kind).distribution()


def proposal_cost(g: GDistribution) -> float:
    """Q(g) = 2 (F - E[M]): expected LP solves per forward proposal."""
    return g.proposal_cost()
