"""Metropolis-Hastings over the fiber with dynamic Markov bases.

Each step draws a fresh cell order, reduces the constraints under it,
draws a neighbour order M from ``g`` and proposes a table that shares the
first M free cells with the current one.  Only the mixture component that
produced the proposal enters the acceptance ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as K
from .bounds import ReferenceSet
from .linalg import RrefSystem
from .samplers import SampledTable, kind_code, sample_table_rref, target_code


class InitializationError(RuntimeError):
    """No starting table could be sampled within the attempt budget."""


@dataclass
class ChainState:
    table: np.ndarray  # full-length counts
    permutation: np.ndarray | None = None


@dataclass(frozen=True)
class GDistribution:
    """Distribution of the neighbour order M on 0..support_size-1."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size == 0:
            raise ValueError("g needs a nonempty support")
        if (p <= 0).any() or not np.isfinite(p).all():
            raise ValueError("g must be strictly positive on its whole support")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"g sums to {p.sum()}, not 1")
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, support_size: int) -> "GDistribution":
        return cls(np.full(support_size, 1.0 / support_size))

    @classmethod
    def from_counts(cls, counts) -> "GDistribution":
        counts = np.asarray(counts, dtype=np.float64)
        return cls(counts / counts.sum())

    @property
    def support_size(self) -> int:
        return int(self.probs.size)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    @property
    def mean(self) -> float:
        return float(np.arange(self.support_size) @ self.probs)

    @property
    def mode(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def entropy(self) -> float:
        return float(-(self.probs * np.log(self.probs)).sum())

    def proposal_cost(self) -> float:
        """Expected LP solves per forward proposal: 2 (F - E[M])."""
        return 2.0 * (self.support_size - self.mean)

    def sample(self, rng: np.random.Generator) -> int:
        return int(K.draw_index(rng, self.cdf))

    def to_json(self) -> dict:
        return {"support_size": self.support_size, "probs": self.probs.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "GDistribution":
        """Accepts the bare form or a full ``fibrewalk gfit`` report holding it under ``"g"``."""
        if "probs" not in obj and isinstance(obj.get("g"), dict):
            obj = obj["g"]
        probs = obj["probs"]
        if len(probs) != obj.get("support_size", len(probs)):
            raise ValueError("support_size does not match the number of probabilities")
        return cls(np.asarray(probs, dtype=np.float64))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "GDistribution":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class Proposal:
    sampled: SampledTable  # log_prob is the forward path probability
    log_reverse: float
    M: int


def _check_order(r: RrefSystem, M: int) -> None:
    if not 0 <= M < r.n_free:
        raise ValueError(f"M must lie in 0..{r.n_free - 1}, got {M}")


def sample_neighbor(
    rs: ReferenceSet, state: ChainState, order, M: int, kind: str, rng: np.random.Generator
) -> Proposal:
    """Order-M neighbour of ``state`` under the cell order ``order``.

    The first M free cells keep their current values, free cell M+1 avoids
    its current value and the rest are sampled afresh.  The reverse path
    probability of the current table is computed along the way.
    """
    order = np.asarray(order, dtype=np.int64)
    r = rs.rref(order)
    _check_order(r, M)
    cur = rs.sub(state.table)
    out = np.zeros(rs.n_sampling, np.int64)
    st, logf, logr, nlp = K.propose_neighbor(
        rng, r.num, r.rhs, r.den, r.bound, r.free, rs.lower, rs.upper, cur, M,
        kind_code(kind), rs.log_factorials, out,
    )
    table = rs.full(out) if st == K.OK else None
    return Proposal(SampledTable(table, float(logf), order, int(st), int(nlp)), float(logr), M)


def reverse_path_prob(rs: ReferenceSet, proposed: np.ndarray, state: ChainState, order, M: int, kind: str) -> float:
    """log probability that a proposal from ``proposed`` lands on ``state.table``.

    Both tables must agree on the first M free cells of ``order``.
    """
    order = np.asarray(order, dtype=np.int64)
    r = rs.rref(order)
    _check_order(r, M)
    src = rs.sub(proposed)
    dst = rs.sub(state.table)
    head = r.free[:M]
    if not np.array_equal(src[head], dst[head]):
        raise ValueError("tables differ on the shared free cells")
    t = int(r.free[M])
    if src[t] == dst[t]:
        raise ValueError(f"tables agree on free cell {M}; not an order-{M} neighbour")
    n = rs.n_sampling
    T, beta, basis, pos = K.float_tableau(r.num, r.rhs, r.den, r.bound, n)
    lo = rs.lower.astype(np.float64)
    hi = rs.upper.astype(np.float64)
    for f in head:
        lo[f] = hi[f] = src[f]
        K.evict_pinned(T, beta, basis, pos, lo, hi, f)
    x = src.astype(np.float64)
    xmin = np.empty(n)
    xmax = np.empty(n)
    _, lr, ur = K.cell_bounds(T, beta, basis, pos, x, lo, hi, t, xmin, xmax)
    L, U = K.round_bounds(lr, ur)
    logp = K.log_pmf(kind_code(kind), L, U, int(dst[t]), int(src[t]), rs.log_factorials)
    lo[t] = hi[t] = dst[t]
    K.evict_pinned(T, beta, basis, pos, lo, hi, t)
    x = dst.astype(np.float64)
    rest, _ = K.score_free_suffix(
        T, beta, basis, pos, x, lo, hi, r.free, M + 1, -1, kind_code(kind), rs.log_factorials, dst
    )
    return float(logp + rest)


@dataclass
class Counters:
    accepted: int = 0
    rejected: int = 0
    failed: int = 0
    lp_solves: int = 0
    rref_fallbacks: int = 0

    @classmethod
    def from_array(cls, a) -> "Counters":
        return cls(*(int(v) for v in a[:5]))

    def as_array(self) -> np.ndarray:
        return np.array([self.accepted, self.rejected, self.failed, self.lp_solves, self.rref_fallbacks], np.int64)

    @property
    def iterations(self) -> int:
        return self.accepted + self.rejected + self.failed

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.iterations if self.iterations else 0.0

    @property
    def failure_rate(self) -> float:
        return self.failed / self.iterations if self.iterations else 0.0


def mh_step(
    rs: ReferenceSet,
    state: ChainState,
    g: GDistribution,
    rng: np.random.Generator,
    target: str = "hypergeometric",
    kind: str = "reciprocal",
    counters: Counters | None = None,
) -> tuple[ChainState, str]:
    """One update.  Returns the next state and "accepted", "rejected" or "failed"."""
    order = rng.permutation(rs.n_sampling).astype(np.int64)
    M = g.sample(rng)
    if g.support_size != rs.n_free:
        raise ValueError(f"g has support {g.support_size} but the fiber has {rs.n_free} free cells")
    prop = sample_neighbor(rs, state, order, M, kind, rng)
    if counters is not None:
        counters.lp_solves += prop.sampled.lp_solves
    if not prop.sampled.ok:
        outcome = "failed"
        nxt = ChainState(state.table, order)
    else:
        code = target_code(target)
        new = rs.sub(prop.sampled.table)
        old = rs.sub(state.table)
        log_alpha = (
            K.log_kernel(code, new, rs.log_factorials)
            - K.log_kernel(code, old, rs.log_factorials)
            + prop.log_reverse
            - prop.sampled.log_prob
        )
        if log_alpha >= 0.0 or math.log(rng.random()) < log_alpha:
            outcome = "accepted"
            nxt = ChainState(prop.sampled.table, order)
        else:
            outcome = "rejected"
            nxt = ChainState(state.table, order)
    if counters is not None:
        setattr(counters, outcome, getattr(counters, outcome) + 1)
    return nxt, outcome


@dataclass(frozen=True)
class Exceedance:
    """Record {X2(n) >= X2(obs)} and {G2(n) >= G2(obs)} at every recorded step."""

    fitted: np.ndarray  # full-length expected counts
    observed_x2: float
    observed_g2: float
    rel_tol: float = 1e-9  # ties count as exceedances

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([self.observed_x2, self.observed_g2]) * (1.0 - self.rel_tol)


@dataclass
class ChainResult:
    indicators: np.ndarray | None  # (recorded steps, 2): X2 then G2
    trace: list  # callback values (Python path only)
    counters: Counters
    final: ChainState
    start: ChainState
    visit_codes: np.ndarray | None = None
    init_attempts: int = 1
    failed_check: int = 0  # step (1-based) at which an invariant check failed, 0 if none


def initial_state(rs: ReferenceSet, rng: np.random.Generator, kind: str = "reciprocal", attempts: int = 1000) -> tuple[ChainState, int]:
    """Start from a table drawn by the free-cell sampler under a random order."""
    for i in range(1, attempts + 1):
        s = sample_table_rref(rs, rng, kind)
        if s.ok:
            return ChainState(s.table, s.order), i
    raise InitializationError(f"no table sampled in {attempts} attempts")


def run_chain(
    rs: ReferenceSet,
    g: GDistribution,
    rng: np.random.Generator,
    iterations: int,
    burn_in: int = 0,
    target: str = "hypergeometric",
    kind: str = "reciprocal",
    start: ChainState | None = None,
    exceedance: Exceedance | None = None,
    callback: Callable[[np.ndarray], object] | None = None,
    code_weights: np.ndarray | None = None,
    init_attempts: int = 1000,
    check_every: int = 1,
) -> ChainResult:
    """Run ``iterations`` steps (burn-in included) and record the steps after ``burn_in``.

    With ``callback`` every recorded step calls it on the full table and the
    chain runs step by step in Python.  Otherwise the whole chain runs in
    compiled code, recording exceedance indicators and, if ``code_weights``
    is given, the dot product of each visited table with it.
    """
    if not iterations >= burn_in >= 0:
        raise ValueError("need iterations >= burn_in >= 0")
    if g.support_size != rs.n_free:
        raise ValueError(f"g has support {g.support_size} but the fiber has {rs.n_free} free cells")
    tries = 0
    if start is None:
        start, tries = initial_state(rs, rng, kind, init_attempts)
    elif not rs.contains(start.table):
        raise ValueError("start table is not in the fiber")
    n_rec = iterations - burn_in

    if callback is not None:
        counters = Counters()
        state = start
        trace = []
        for it in range(iterations):
            state, outcome = mh_step(rs, state, g, rng, target, kind, counters)
            if outcome == "accepted" and check_every > 0 and counters.accepted % check_every == 0:
                if not rs.contains(state.table):
                    return ChainResult(None, trace, counters, state, start, None, tries, it + 1)
            if it >= burn_in:
                trace.append(callback(state.table))
        return ChainResult(None, trace, counters, state, start, None, tries)

    cur = rs.sub(start.table).copy()
    A = np.ascontiguousarray(rs.reduced.A)
    b = np.ascontiguousarray(rs.reduced.b)
    if exceedance is not None:
        mu_full = np.asarray(exceedance.fitted, dtype=np.float64)
        mu = mu_full[rs.cells].copy()
        fixed = np.setdiff1d(np.arange(rs.n_cells), rs.cells)
        fixed_part = np.zeros(2)
        fv = rs.fixed_values[fixed]
        fm = mu_full[fixed]
        pos = fm > 0
        fixed_part[0] = float((((fv - fm) ** 2)[pos] / fm[pos]).sum())
        nz = pos & (fv > 0)
        fixed_part[1] = float((2.0 * fv[nz] * np.log(fv[nz] / fm[nz])).sum())
        thresholds = exceedance.thresholds
        indicators = np.zeros((n_rec, 2), np.int8)
    else:
        mu = np.zeros(rs.n_sampling)
        fixed_part = np.zeros(2)
        thresholds = np.array([np.inf, np.inf])
        indicators = np.zeros((n_rec, 2), np.int8)
    weights = np.zeros(0, np.int64) if code_weights is None else np.asarray(code_weights, np.int64)[rs.cells].copy()
    codes = np.zeros(n_rec if weights.size else 0, np.int64)
    counters = np.zeros(5, np.int64)
    bad = K.run_chain(
        rng, A, b, rs.lower, rs.upper, cur, target_code(target), g.cdf, kind_code(kind), rs.log_factorials,
        iterations, burn_in, mu, fixed_part, thresholds, indicators, codes, weights, counters, check_every,
    )
    if code_weights is not None:
        # fixed cells add a constant, so codes match the full tables
        codes += int(np.asarray(code_weights, np.int64) @ rs.fixed_values)
    final = ChainState(rs.full(cur))
    return ChainResult(
        indicators if exceedance is not None else None, [], Counters.from_array(counters), final, start,
        codes if code_weights is not None else None, tries, int(bad),
    )
