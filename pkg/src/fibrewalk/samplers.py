"""Sequential table generation and the importance-sampling baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .bounds import ReferenceSet

KINDS = {
    "reciprocal": K.KIND_RECIPROCAL,
    "uniform": K.KIND_UNIFORM,
    "hypergeometric": K.KIND_HYPERGEOMETRIC,
}
TARGETS = {"uniform": K.TARGET_UNIFORM, "hypergeometric": K.TARGET_HYPERGEOMETRIC}

FAILURES = {
    K.FAIL_EMPTY: "empty support",
    K.FAIL_CROSS: "bounds crossed",
    K.FAIL_BACKSUB: "back-substitution rejected",
    K.FAIL_LP: "simplex failure",
}


class EmptySupport(ValueError):
    """No value is left to sample once the excluded value is removed."""


def kind_code(kind: str) -> int:
    try:
        return KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown cell distribution {kind!r}; choose from {sorted(KINDS)}") from None


def target_code(target: str) -> int:
    try:
        return TARGETS[target]
    except KeyError:
        raise ValueError(f"unknown target {target!r}; choose from {sorted(TARGETS)}") from None


def _log_fact_for(*values: int) -> np.ndarray:
    from .bounds import log_factorial_table

    return log_factorial_table(2 * max(values, default=0) + 2)


def cell_pmf(kind: str, lower: int, upper: int, value: int, excluded: int | None = None) -> float:
    """Probability of ``value`` under f on (lower:upper) with ``excluded`` removed.

    reciprocal: proportional to 1/(1+v); uniform: flat;
    hypergeometric: C(U, v) C(U, L+U-v) / C(2U, L+U).
    """
    if lower > upper:
        raise ValueError(f"empty range ({lower}:{upper})")
    excl = -1 if excluded is None else int(excluded)
    size = upper - lower + 1 - (1 if lower <= excl <= upper else 0)
    if size <= 0:
        raise EmptySupport(f"({lower}:{upper}) without {excluded} is empty")
    lf = _log_fact_for(upper)
    return math.exp(K.log_pmf(kind_code(kind), int(lower), int(upper), int(value), excl, lf))


@dataclass
class SampledTable:
    table: np.ndarray | None  # full-length counts, None on failure
    log_prob: float  # log path probability (sum over cells actually sampled)
    order: np.ndarray
    status: int = K.OK
    lp_solves: int = 0

    @property
    def ok(self) -> bool:
        return self.table is not None

    @property
    def reason(self) -> str:
        return "ok" if self.ok else FAILURES.get(self.status, "failed")


def _order(rs: ReferenceSet, order, rng) -> np.ndarray:
    if order is None:
        return rng.permutation(rs.n_sampling).astype(np.int64)
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (rs.n_sampling,) or not np.array_equal(np.sort(order), np.arange(rs.n_sampling)):
        raise ValueError("order must permute the sampling cells")
    return order


def sample_table_sequential(rs: ReferenceSet, rng: np.random.Generator, kind: str = "reciprocal", order=None) -> SampledTable:
    """Visit every cell in ``order``, drawing each from its updated LP bounds."""
    order = _order(rs, order, rng)
    r = rs.rref(order)
    out = np.zeros(rs.n_sampling, np.int64)
    st, logp, nlp = K.sample_table_sequential(
        rng, r.num, r.rhs, r.den, r.bound, order, rs.lower, rs.upper, rs.observed_sub,
        rs.reduced.A, rs.reduced.b, kind_code(kind), rs.log_factorials, out,
    )
    table = rs.full(out) if st == K.OK else None
    return SampledTable(table, float(logp), order, int(st), int(nlp))


def sample_table_rref(rs: ReferenceSet, rng: np.random.Generator, kind: str = "reciprocal", order=None) -> SampledTable:
    """Draw only the free cells of the RREF under ``order``; back-substitute the rest."""
    order = _order(rs, order, rng)
    r = rs.rref(order)
    out = np.zeros(rs.n_sampling, np.int64)
    st, logp, nlp = K.sample_table_rref(
        rng, r.num, r.rhs, r.den, r.bound, r.free, rs.lower, rs.upper, rs.observed_sub,
        kind_code(kind), rs.log_factorials, out,
    )
    table = rs.full(out) if st == K.OK else None
    return SampledTable(table, float(logp), order, int(st), int(nlp))


def log_target(rs: ReferenceSet, counts: np.ndarray, target: str) -> float:
    """Unnormalised log target over the sampling cells (fixed cells cancel)."""
    return float(K.log_kernel(target_code(target), rs.sub(counts), rs.log_factorials))


@dataclass
class SisDraws:
    """Successful draws of an importance-sampling run."""

    tables: np.ndarray  # (successes, n_cells)
    log_weights: np.ndarray  # log target - log path probability
    n_attempts: int

    @property
    def accept_rate(self) -> float:
        return self.tables.shape[0] / self.n_attempts


def sis_draws(
    rs: ReferenceSet,
    num_samples: int,
    rng: np.random.Generator,
    kind: str = "hypergeometric",
    target: str = "uniform",
    algorithm: str = "sequential",
    order=None,
) -> SisDraws:
    """``num_samples`` sampler attempts; ``order=None`` draws a fresh cell order each time."""
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    draw = {"sequential": sample_table_sequential, "rref": sample_table_rref}[algorithm]
    tables = []
    logw = []
    for _ in range(num_samples):
        s = draw(rs, rng, kind, order)
        if s.ok:
            tables.append(s.table)
            logw.append(log_target(rs, s.table, target) - s.log_prob)
    return SisDraws(np.array(tables, np.int64).reshape(-1, rs.n_cells), np.array(logw), num_samples)


@dataclass
class SisEstimate:
    estimate: float
    standard_error: float
    accept_rate: float
    n_attempts: int
    effective_sample_size: float


def _normalised(logw: np.ndarray) -> tuple[np.ndarray, float]:
    shift = float(logw.max())
    return np.exp(logw - shift), shift


def sis_mean_weight(draws: SisDraws) -> SisEstimate:
    """Mean importance weight over all attempts, failures counting as zero."""
    if draws.log_weights.size == 0:
        raise RuntimeError("every SIS attempt failed")
    w, shift = _normalised(draws.log_weights)
    full = np.zeros(draws.n_attempts)
    full[: w.size] = w
    scale = math.exp(shift)
    se = full.std(ddof=1) / math.sqrt(full.size) if full.size > 1 else math.inf
    ess = float(w.sum() ** 2 / (w**2).sum())
    return SisEstimate(float(full.mean() * scale), float(se * scale), draws.accept_rate, draws.n_attempts, ess)


def sis_ratio(draws: SisDraws, hits: np.ndarray) -> SisEstimate:
    """Self-normalised estimate of P(hit) with a delta-method standard error."""
    if draws.log_weights.size == 0:
        raise RuntimeError("every SIS attempt failed")
    w, _ = _normalised(draws.log_weights)
    h = np.asarray(hits, dtype=np.float64)
    p = float((w * h).sum() / w.sum())
    se = float(math.sqrt(((w * (h - p)) ** 2).sum()) / w.sum())
    ess = float(w.sum() ** 2 / (w**2).sum())
    return SisEstimate(p, se, draws.accept_rate, draws.n_attempts, ess)


def sis_estimate(
    rs: ReferenceSet,
    num_samples: int,
    rng: np.random.Generator,
    kind: str = "hypergeometric",
    target: str = "uniform",
    indicator: Callable[[np.ndarray], bool] | None = None,
    algorithm: str = "sequential",
    order=None,
) -> SisEstimate:
    """Importance-sampling estimate from ``num_samples`` sampler attempts.

    Without ``indicator`` the estimate is the mean weight over all attempts
    (failures weigh zero): the table count for a uniform target, the
    normaliser of the hypergeometric kernel otherwise.  With ``indicator``
    it is the self-normalised ratio sum(w I) / sum(w).
    """
    draws = sis_draws(rs, num_samples, rng, kind, target, algorithm, order)
    if indicator is None:
        return sis_mean_weight(draws)
    return sis_ratio(draws, np.array([bool(indicator(t)) for t in draws.tables]))
