"""Fitted values, goodness-of-fit statistics, degrees of freedom and p-values."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .tables import BoundsSpec, ModelSpec, Table, TableSchema, marginal


@dataclass(frozen=True)
class FittedTable:
    mu: np.ndarray
    converged: bool
    iterations: int
    max_deviation: float


def ipf_fit(
    schema: TableSchema,
    observed: Table,
    model: ModelSpec,
    structural_zeros: Sequence[int] = (),
    tol: float = 1e-8,
    max_sweeps: int = 1000,
) -> FittedTable:
    """Maximum-likelihood expected counts by iterative proportional fitting.

    Starts from ones (zeros at structural zeros) and rescales each generator
    marginal in turn until every fitted marginal is within ``tol`` of the
    observed one.
    """
    dims = schema.dims
    mu = np.ones(dims)
    zeros = np.zeros(schema.n_cells, bool)
    zeros[list(structural_zeros)] = True
    mu.reshape(-1)[zeros] = 0.0
    obs = observed.counts.reshape(dims).astype(np.float64)
    targets = [marginal(obs, g, schema) for g in model.generators]
    dev = math.inf
    for sweep in range(1, max_sweeps + 1):
        for g, target in zip(model.generators, targets):
            drop = tuple(v for v in range(schema.k) if v not in g)
            current = mu.sum(axis=drop, keepdims=True)
            ratio = np.divide(np.expand_dims(target, drop), current, out=np.zeros_like(current), where=current > 0)
            mu *= ratio
        dev = max(float(np.abs(marginal(mu, g, schema) - t).max()) for g, t in zip(model.generators, targets))
        if dev < tol:
            return FittedTable(mu.reshape(-1), True, sweep, dev)
    return FittedTable(mu.reshape(-1), False, max_sweeps, dev)


def test_statistic(kind: str, table, fitted: FittedTable | np.ndarray) -> float:
    """Pearson X2 (``"X2"``) or likelihood-ratio G2 (``"G2"``) of ``table`` against the fit."""
    n = np.asarray(table.counts if isinstance(table, Table) else table, dtype=np.float64)
    mu = fitted.mu if isinstance(fitted, FittedTable) else np.asarray(fitted, dtype=np.float64)
    if ((mu <= 0) & (n > 0)).any():
        raise ValueError("positive count in a cell with zero expected value")
    pos = mu > 0
    if kind == "X2":
        return float((((n - mu) ** 2)[pos] / mu[pos]).sum())
    if kind == "G2":
        nz = n > 0
        return float(2.0 * (n[nz] * np.log(n[nz] / mu[nz])).sum())
    raise ValueError(f"unknown statistic {kind!r}; use 'X2' or 'G2'")


def unsaturated_df(schema: TableSchema, model: ModelSpec) -> int:
    """Cells minus the log-linear parameters of the hierarchical model."""
    params = sum(math.prod(schema.dims[v] - 1 for v in term) for term in model.interaction_terms())
    return schema.n_cells - params


def zero_marginal_cells(schema: TableSchema, model: ModelSpec, structural_zeros: Sequence[int]) -> int:
    """Cells of the generator marginals made up entirely of structural zeros."""
    z = np.zeros(schema.n_cells)
    z[list(structural_zeros)] = 1.0
    ones = np.ones(schema.n_cells)
    total = 0
    for g in model.generators:
        zeros_per_cell = marginal(z, g, schema)
        cells_per_cell = marginal(ones, g, schema)
        total += int((zeros_per_cell == cells_per_cell).sum())
    return total


def degrees_of_freedom(schema: TableSchema, model: ModelSpec, structural_zeros: Sequence[int] = ()) -> int:
    zs = list(structural_zeros)
    return unsaturated_df(schema, model) - len(zs) + zero_marginal_cells(schema, model, zs)


def asymptotic_p(stat: float, df: int) -> float:
    """Upper tail of the chi-square distribution with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be at least 1")
    return float(chi2.sf(stat, df))


@dataclass(frozen=True)
class BatchMeans:
    estimate: float
    se: float  # standard deviation of the batch estimates
    se_of_mean: float  # se / sqrt(number of batches)
    n_batches: int
    batch_size: int


def batch_means_se(traces: Sequence[np.ndarray], batches_per_chain: int = 10) -> BatchMeans:
    """Split each chain's indicator trace into equal consecutive batches.

    Trailing steps that do not fill a whole batch are dropped.  The estimate
    is the mean over all batches and the error is their standard deviation.
    """
    if batches_per_chain < 1:
        raise ValueError("need at least one batch per chain")
    means = []
    size = None
    for tr in traces:
        tr = np.asarray(tr, dtype=np.float64)
        b = tr.size // batches_per_chain
        if b == 0:
            raise ValueError(f"trace of length {tr.size} is too short for {batches_per_chain} batches")
        size = b if size is None else min(size, b)
        means.extend(tr[: b * batches_per_chain].reshape(batches_per_chain, b).mean(axis=1))
    if not means:
        raise ValueError("no traces given")
    means = np.array(means)
    sd = float(means.std(ddof=1)) if means.size > 1 else 0.0
    return BatchMeans(float(means.mean()), sd, sd / math.sqrt(means.size), int(means.size), int(size))


@dataclass
class PValueReport:
    statistic: str
    observed: float
    exact_p: float
    standard_error: float
    asymptotic_p: float
    df: int
    acceptance_rate: float
    failure_rate: float
    standard_error_of_mean: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.exact_p <= 1.0:
            raise ValueError("p-value outside [0, 1]")
        if self.standard_error < 0:
            raise ValueError("negative standard error")

    def to_dict(self) -> dict:
        return asdict(self)


def structural_zero_cells(bounds: BoundsSpec) -> np.ndarray:
    return bounds.structural_zeros
