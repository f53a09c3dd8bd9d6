"""Exhaustive enumeration of small fibers (branch and bound over free cells)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K
from .bounds import LpInfeasible, ReferenceSet, reference_set
from .linalg import InfeasibleSystem
from .tables import Dataset

DEFAULT_LIMIT = 10**6


class FiberOverflow(RuntimeError):
    """The fiber has more tables than the enumeration limit."""


@dataclass
class Fiber:
    tables: np.ndarray  # (count, n_cells), full tables in discovery order
    overflow: bool = False  # True when enumeration stopped at the limit

    @property
    def size(self) -> int:
        return int(self.tables.shape[0])

    def log_kernels(self, rs: ReferenceSet, target: str = "hypergeometric") -> np.ndarray:
        from .samplers import target_code

        code = target_code(target)
        return np.array([K.log_kernel(code, rs.sub(t), rs.log_factorials) for t in self.tables])

    def probabilities(self, rs: ReferenceSet, target: str = "hypergeometric") -> np.ndarray:
        """Exact target probability of each table."""
        lk = self.log_kernels(rs, target)
        return np.exp(lk - logsumexp(lk))

    def log_normalizer(self, rs: ReferenceSet, target: str = "hypergeometric") -> float:
        return float(logsumexp(self.log_kernels(rs, target)))


def _walk(rs: ReferenceSet, limit: int) -> tuple[list[np.ndarray], bool]:
    n = rs.n_sampling
    r = rs.rref()
    free = r.free
    F = free.size
    lo_i, hi_i = rs.lower, rs.upper
    found: list[np.ndarray] = []
    vals = np.zeros(n, np.int64)
    out = np.zeros(n, np.int64)

    def leaf() -> bool:
        if K.back_substitute(r.num, r.rhs, r.den, r.bound, free, vals, lo_i, hi_i, out):
            found.append(rs.full(out.copy()))
            if len(found) > limit:
                return False
        return True

    def dfs(k, T, beta, basis, pos, x, lo, hi) -> bool:
        if k == F:
            return leaf()
        t = free[k]
        xmin = np.empty(n)
        xmax = np.empty(n)
        st, lr, ur = K.cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
        if st != 0:
            raise RuntimeError("simplex failed during enumeration")
        L, U = K.round_bounds(lr, ur)
        for v in range(L, U + 1):
            state = (T.copy(), beta.copy(), basis.copy(), pos.copy(), xmax.copy(), lo.copy(), hi.copy())
            K.pin_between(state[0], state[1], state[2], state[3], state[4], state[5], state[6], t, float(v), lr, ur, xmin, xmax)
            vals[t] = v
            if not dfs(k + 1, *state):
                return False
        return True

    T, beta, basis, pos = K.float_tableau(r.num, r.rhs, r.den, r.bound, n)
    x = rs.observed_sub.astype(np.float64)
    complete = dfs(0, T, beta, basis, pos, x, lo_i.astype(np.float64), hi_i.astype(np.float64))
    return found, not complete


def enumerate_fiber(source: Dataset | ReferenceSet, limit: int = DEFAULT_LIMIT) -> Fiber:
    """Every table of the fiber, or the first ``limit`` with ``overflow`` set.

    An infeasible specification yields an empty fiber.
    """
    if isinstance(source, Dataset):
        try:
            rs = reference_set(source)
        except (LpInfeasible, InfeasibleSystem):
            return Fiber(np.zeros((0, source.schema.n_cells), np.int64))
    else:
        rs = source
    if rs.n_free == 0:
        return Fiber(rs.full(rs.observed_sub)[None, :])
    found, overflow = _walk(rs, limit)
    tables = np.array(found[:limit], dtype=np.int64).reshape(-1, rs.n_cells)
    return Fiber(tables, overflow)


def enumerate_or_raise(source: Dataset | ReferenceSet, limit: int = DEFAULT_LIMIT) -> Fiber:
    fib = enumerate_fiber(source, limit)
    if fib.overflow:
        raise FiberOverflow(f"more than {limit} tables")
    return fib
