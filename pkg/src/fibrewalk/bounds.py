"""Linear-programming cell bounds and the reference set they induce.

Bounds are real LP optima rounded inward (ceil of the minimum, floor of the
maximum) after snapping values within ``SNAP`` of an integer.  The LPs run on
the reduced (RREF) system with a bounded-variable primal simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .linalg import (
    ConstraintSystem,
    InfeasibleSystem,
    RrefSystem,
    build_constraints,
    eliminate_columns,
    independent_rows,
    rref,
)
from .tables import BoundsSpec, Dataset, ModelSpec, Table, TableSchema

SNAP = K.SNAP


class LpInfeasible(ValueError):
    """The LP relaxation has no feasible point."""


class DeadEnd(LpInfeasible):
    """A prefix of pinned cells admits no completion."""


@dataclass(frozen=True)
class CellBounds:
    lower: int
    upper: int

    @property
    def forced(self) -> bool:
        return self.lower == self.upper


def round_inward(lr: float, ur: float) -> CellBounds:
    return CellBounds(math.ceil(lr - SNAP), math.floor(ur + SNAP))


@dataclass
class LpProblem:
    """minimize or maximize ``x[target]`` s.t. the equality system, box bounds and pins."""

    target: int
    sense: str  # "min" | "max"
    system: ConstraintSystem | RrefSystem
    lower: np.ndarray
    upper: np.ndarray
    pins: Sequence[tuple[int, int]] = ()

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        self.lower = np.asarray(self.lower, dtype=np.int64)
        self.upper = np.asarray(self.upper, dtype=np.int64)
        if (self.lower > self.upper).any():
            raise ValueError("box bounds with lower > upper")
        for cell, value in self.pins:
            if not self.lower[cell] <= value <= self.upper[cell]:
                raise ValueError(f"pin {cell}={value} lies outside its box")


class _Tableau:
    """Mutable simplex state over one reduced system."""

    def __init__(self, r: RrefSystem, lower, upper):
        n = r.num.shape[1]
        self.T, self.beta, self.basis, self.pos = K.float_tableau(r.num, r.rhs, r.den, r.bound, n)
        self.lo = np.asarray(lower, dtype=np.float64).copy()
        self.hi = np.asarray(upper, dtype=np.float64).copy()
        self.x = np.empty(n)
        self.feasible = False

    def pin(self, cell: int, value: float):
        self.lo[cell] = value
        self.hi[cell] = value

    def start_from(self, point: np.ndarray):
        self.x[:] = point
        self.feasible = True

    def find_feasible(self):
        nb = self.pos < 0
        self.x[nb] = self.lo[nb]
        K.basics_from_nonbasics(self.T, self.beta, self.basis, self.pos, self.x)
        status = K.lp_phase1(self.T, self.beta, self.basis, self.pos, self.x, self.lo, self.hi)
        if status == 1:
            raise LpInfeasible("no point satisfies the constraints")
        if status != 0:
            raise RuntimeError("phase one did not terminate")
        self.feasible = True

    def optimize(self, target: int, sense: float) -> float:
        if not self.feasible:
            self.find_feasible()
        status, value = K.lp_optimize(self.T, self.beta, self.basis, self.pos, self.x, self.lo, self.hi, target, sense)
        if status != 0:
            raise RuntimeError("simplex hit its iteration cap")
        return float(value)


def _as_rref(system: ConstraintSystem | RrefSystem) -> RrefSystem:
    return system if isinstance(system, RrefSystem) else rref(system)


def solve_lp(problem: LpProblem) -> float:
    """Optimal value of the real relaxation; raises :class:`LpInfeasible`."""
    try:
        r = _as_rref(problem.system)
    except InfeasibleSystem as exc:
        raise LpInfeasible(str(exc)) from exc
    tab = _Tableau(r, problem.lower, problem.upper)
    for cell, value in problem.pins:
        tab.pin(cell, value)
    return tab.optimize(problem.target, 1.0 if problem.sense == "min" else -1.0)


def cell_bounds_given(
    r: RrefSystem,
    lower: np.ndarray,
    upper: np.ndarray,
    pins: Iterable[tuple[int, int]],
    target: int,
    feasible: np.ndarray | None = None,
) -> CellBounds:
    """Rounded LP bounds of ``target`` once the cells in ``pins`` are fixed.

    ``feasible`` (any table agreeing with the pins) skips phase one.
    Raises :class:`DeadEnd` when the pins admit no real completion or the
    rounded bounds cross.
    """
    tab = _Tableau(r, lower, upper)
    for cell, value in pins:
        tab.pin(cell, value)
    if feasible is not None:
        tab.start_from(feasible)
    try:
        lr = tab.optimize(target, 1.0)
        ur = tab.optimize(target, -1.0)
    except LpInfeasible as exc:
        raise DeadEnd(str(exc)) from exc
    cb = round_inward(lr, ur)
    if cb.lower > cb.upper:
        raise DeadEnd(f"rounded bounds cross for cell {target}: {cb}")
    return cb


@dataclass(frozen=True)
class GlobalBounds:
    lower: np.ndarray
    upper: np.ndarray

    @property
    def fixed(self) -> np.ndarray:
        """Cells whose value is the same in every table of the reference set."""
        return np.flatnonzero(self.lower == self.upper)

    @property
    def sampling(self) -> np.ndarray:
        return np.flatnonzero(self.lower < self.upper)


def compute_global_bounds(
    system: ConstraintSystem,
    box: BoundsSpec,
    feasible: np.ndarray | None = None,
    max_rounds: int = 20,
) -> GlobalBounds:
    """Per-cell LP bounds under the equality constraints and the box.

    The rounded bounds are fed back as the new box until they stop changing.
    """
    try:
        r = rref(system)
    except InfeasibleSystem as exc:
        raise LpInfeasible(str(exc)) from exc
    lo = box.lower.astype(np.int64).copy()
    hi = box.upper.astype(np.int64).copy()
    for _ in range(max_rounds):
        tab = _Tableau(r, lo, hi)
        if feasible is not None:
            tab.start_from(np.asarray(feasible, np.float64))
        else:
            tab.find_feasible()
        new_lo = np.empty_like(lo)
        new_hi = np.empty_like(hi)
        if K.all_cell_bounds(tab.T, tab.beta, tab.basis, tab.pos, tab.x, tab.lo, tab.hi, new_lo, new_hi):
            raise RuntimeError("simplex hit its iteration cap")
        if (new_lo > new_hi).any():
            raise LpInfeasible("rounded bounds cross: the reference set is empty")
        new_lo = np.maximum(new_lo, lo)
        new_hi = np.minimum(new_hi, hi)
        if np.array_equal(new_lo, lo) and np.array_equal(new_hi, hi):
            break
        lo, hi = new_lo, new_hi
    return GlobalBounds(lo, hi)


@dataclass
class ReferenceSet:
    """Everything the samplers need about one fiber.

    Sampling happens over ``cells`` (the cells with L < U).  The fixed cells
    are substituted into the constraints and carried separately.
    """

    schema: TableSchema
    model: ModelSpec
    observed: Table
    box: BoundsSpec
    system: ConstraintSystem  # marginal rows plus one row per fixed cell
    bounds: GlobalBounds
    reduced: ConstraintSystem  # independent rows over the sampling cells only
    cells: np.ndarray
    fixed_values: np.ndarray  # full-length; meaningful on fixed cells
    rank_reduced: int
    _log_fact: np.ndarray = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return self.schema.n_cells

    @property
    def n_sampling(self) -> int:
        return int(self.cells.size)

    @property
    def rank(self) -> int:
        """Rank of the full system (marginal rows and fixed-cell rows)."""
        return self.rank_reduced + (self.n_cells - self.n_sampling)

    @property
    def n_free(self) -> int:
        return self.n_cells - self.rank

    @property
    def lower(self) -> np.ndarray:
        return self.bounds.lower[self.cells]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds.upper[self.cells]

    @property
    def observed_sub(self) -> np.ndarray:
        return self.observed.counts[self.cells].astype(np.int64)

    @property
    def log_factorials(self) -> np.ndarray:
        if self._log_fact is None:
            size = 2 * int(self.observed.total) + 2
            self._log_fact = log_factorial_table(size)
        return self._log_fact

    def full(self, values: np.ndarray) -> np.ndarray:
        out = self.fixed_values.copy()
        out[self.cells] = values
        return out

    def sub(self, counts: np.ndarray) -> np.ndarray:
        return np.asarray(counts, dtype=np.int64)[self.cells]

    def rref(self, order: Sequence[int] | None = None) -> RrefSystem:
        return rref(self.reduced, order)

    def contains(self, counts: np.ndarray) -> bool:
        counts = np.asarray(counts, dtype=np.int64)
        return bool(
            (self.system.A @ counts == self.system.b).all()
            and (counts >= self.bounds.lower).all()
            and (counts <= self.bounds.upper).all()
        )


def log_factorial_table(size: int) -> np.ndarray:
    """log(k!) for k < size: exact-sum small values, lgamma beyond 256."""
    out = np.zeros(size)
    small = min(size, 257)
    if small > 1:
        out[1:small] = np.cumsum(np.log(np.arange(1, small, dtype=np.float64)))
    for k in range(small, size):
        out[k] = math.lgamma(k + 1.0)
    return out


def reference_set(dataset: Dataset) -> ReferenceSet:
    """Global bounds, fixed cells and the reduced system for a dataset."""
    schema, table, box, model = dataset
    margins = build_constraints(schema, table, model)
    gb = compute_global_bounds(margins, box, feasible=table.counts)
    fixed = gb.fixed
    system = build_constraints(schema, table, model, [(int(i), int(gb.lower[i])) for i in fixed])
    cells = gb.sampling
    fixed_values = np.zeros(schema.n_cells, np.int64)
    fixed_values[fixed] = gb.lower[fixed]
    reduced = independent_rows(eliminate_columns(margins, cells, fixed_values))
    r = rref(reduced)
    return ReferenceSet(schema, model, table, box, system, gb, reduced, cells, fixed_values, r.rank)
