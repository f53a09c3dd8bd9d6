"""Exact constraint systems and reduced row echelon forms.

A :class:`ConstraintSystem` stacks one 0/1 row per marginal cell of every
generator, followed by one unit row per fixed cell.  :func:`rref` reduces it
exactly (integer fraction-free elimination, with a :class:`fractions.Fraction`
fallback if intermediate values grow past the int64 guard).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .tables import ModelSpec, Table, TableSchema


class InfeasibleSystem(ValueError):
    """The equality constraints have no solution (the reference set is empty)."""


@dataclass(frozen=True)
class ConstraintSystem:
    A: np.ndarray  # (m_r, n_cols) int64, entries 0/1
    b: np.ndarray  # (m_r,) int64
    provenance: tuple  # per row: ("margin", generator, marginal cell) or ("fixed", cell)
    columns: np.ndarray  # flat cell index of each column

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]

    def satisfied_by(self, counts: np.ndarray) -> bool:
        return bool((self.A @ np.asarray(counts, dtype=np.int64) == self.b).all())


def margin_matrix(schema: TableSchema, model: ModelSpec) -> tuple[np.ndarray, list]:
    """0/1 matrix mapping a flat table onto its stacked generator marginals."""
    coords = schema.coords()
    blocks = []
    prov = []
    for gen in model.generators:
        sub_dims = [schema.dims[v] for v in gen]
        # row-major position of each cell's projection onto the generator
        key = np.ravel_multi_index(tuple(coords[:, v] for v in gen), sub_dims)
        rows = int(np.prod(sub_dims))
        block = np.zeros((rows, schema.n_cells), np.int64)
        block[key, np.arange(schema.n_cells)] = 1
        blocks.append(block)
        for r in range(rows):
            prov.append(("margin", gen, tuple(int(c) + 1 for c in np.unravel_index(r, sub_dims))))
    return np.vstack(blocks), prov


def build_constraints(
    schema: TableSchema,
    table: Table,
    model: ModelSpec,
    fixed_cells: Iterable[tuple[int, int]] = (),
) -> ConstraintSystem:
    """Marginal rows for every generator plus a unit row for each fixed (cell, value)."""
    A, prov = margin_matrix(schema, model)
    b = A @ table.counts
    fixed = list(fixed_cells)
    if fixed:
        E = np.zeros((len(fixed), schema.n_cells), np.int64)
        fb = np.zeros(len(fixed), np.int64)
        for r, (cell, value) in enumerate(fixed):
            E[r, int(cell)] = 1
            fb[r] = int(value)
            prov.append(("fixed", int(cell)))
        A = np.vstack([A, E])
        b = np.concatenate([b, fb])
    return ConstraintSystem(A, b, tuple(prov), np.arange(schema.n_cells))


def reorder_columns(system: ConstraintSystem, perm: Sequence[int]) -> ConstraintSystem:
    """Column j of the result is column ``perm[j]`` of ``system``."""
    perm = np.asarray(perm, dtype=np.int64)
    n = system.n_cols
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("not a permutation of the system's columns")
    return ConstraintSystem(system.A[:, perm], system.b, system.provenance, system.columns[perm])


def eliminate_columns(system: ConstraintSystem, keep: np.ndarray, values: np.ndarray) -> ConstraintSystem:
    """Substitute known values for the columns not in ``keep``; drop emptied rows."""
    keep = np.asarray(keep, dtype=np.int64)
    mask = np.ones(system.n_cols, bool)
    mask[keep] = False
    b = system.b - system.A[:, mask] @ np.asarray(values, dtype=np.int64)[mask]
    A = system.A[:, keep]
    nz = A.any(axis=1)
    if (b[~nz] != 0).any():
        raise InfeasibleSystem("fixed cells contradict the marginal constraints")
    prov = tuple(p for p, k in zip(system.provenance, nz) if k)
    return ConstraintSystem(A[nz].copy(), b[nz].copy(), prov, system.columns[keep])


@dataclass(frozen=True)
class RrefSystem:
    """Reduced system ``num[i] / den[i] . x = rhs[i] / den[i]``.

    Column indices refer to the columns of the reduced :class:`ConstraintSystem`
    (``columns`` maps them to flat cells).  ``order`` is the permutation the
    form was built under: the pivots are the first columns in that order that
    are independent of their predecessors.
    """

    num: np.ndarray
    rhs: np.ndarray
    den: np.ndarray
    bound: np.ndarray  # pivot column of each row
    free: np.ndarray  # non-pivot columns in ``order`` sequence
    order: np.ndarray
    columns: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.bound.size)

    @property
    def n_free(self) -> int:
        return int(self.free.size)

    def as_fractions(self) -> list[list[Fraction]]:
        """Augmented rows [coefficients..., rhs] as exact fractions."""
        out = []
        for i in range(self.rank):
            d = int(self.den[i])
            row = [Fraction(int(v), d) for v in self.num[i]]
            row.append(Fraction(int(self.rhs[i]), d))
            out.append(row)
        return out


def rref_fractions(A, b, order=None) -> tuple[list[list[Fraction]], list[int]]:
    """Textbook Gauss-Jordan over :class:`Fraction` (slow; reference and fallback).

    Partial pivoting picks the largest magnitude among unused rows, lowest
    row index on ties.  Returns the nonzero augmented rows and their pivots.
    """
    A = np.asarray(A)
    m, n = A.shape
    order = range(n) if order is None else [int(c) for c in order]
    M = [[Fraction(int(v)) for v in A[i]] + [Fraction(int(b[i]))] for i in range(m)]
    rank = 0
    pivots = []
    for c in order:
        if rank == m:
            break
        best = max(range(rank, m), key=lambda i: (abs(M[i][c]), -i))
        if M[best][c] == 0:
            continue
        M[rank], M[best] = M[best], M[rank]
        p = M[rank][c]
        M[rank] = [v / p for v in M[rank]]
        for i in range(m):
            if i != rank and M[i][c] != 0:
                f = M[i][c]
                M[i] = [vi - f * vr for vi, vr in zip(M[i], M[rank])]
        pivots.append(c)
        rank += 1
    if any(M[i][n] != 0 for i in range(rank, m)):
        raise InfeasibleSystem("inconsistent equality constraints")
    return M[:rank], pivots


def _from_fractions(rows, pivots, n) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    from math import lcm

    limit = np.iinfo(np.int64).max
    num = np.zeros((len(rows), n), np.int64)
    rhs = np.zeros(len(rows), np.int64)
    den = np.zeros(len(rows), np.int64)
    for i, row in enumerate(rows):
        d = lcm(*(v.denominator for v in row))
        if any(abs(v * d) > limit for v in row):
            raise OverflowError("the reduced form needs integers wider than 64 bits")
        num[i] = [int(v * d) for v in row[:n]]
        rhs[i] = int(row[n] * d)
        den[i] = d
    return num, rhs, den


def rref(system: ConstraintSystem, order: Sequence[int] | None = None) -> RrefSystem:
    """Exact RREF of ``system`` with columns visited in ``order`` (identity by default).

    Visiting columns in ``order`` is equivalent to reducing
    ``reorder_columns(system, order)``; results are reported in the original
    column indexing.
    """
    n = system.n_cols
    order = np.arange(n, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    A = np.ascontiguousarray(system.A, dtype=np.int64)
    b = np.ascontiguousarray(system.b, dtype=np.int64)
    num, rhs, den, pivots, rank, status = K.rref_bareiss(A, b, order)
    if status == K.RREF_INCONSISTENT:
        raise InfeasibleSystem("inconsistent equality constraints")
    if status == K.RREF_OVERFLOW:
        rows, piv = rref_fractions(A, b, order)
        num, rhs, den = _from_fractions(rows, piv, n)
        pivots = np.array(piv, np.int64)
    free = K.free_columns(n, pivots, order)
    return RrefSystem(num, rhs, den, pivots, free, order, system.columns)


def back_substitute(
    r: RrefSystem, free_values: Sequence[int], lower: np.ndarray, upper: np.ndarray
) -> np.ndarray | None:
    """Bound cells from free cells, or None if any is non-integer or outside [lower, upper]."""
    free_values = np.asarray(free_values, dtype=np.int64)
    if free_values.shape != (r.n_free,):
        raise ValueError(f"expected {r.n_free} free values, got {free_values.shape}")
    n = r.num.shape[1]
    values = np.zeros(n, np.int64)
    values[r.free] = free_values
    out = np.zeros(n, np.int64)
    ok = K.back_substitute(
        r.num, r.rhs, r.den, r.bound, r.free, values,
        np.asarray(lower, np.int64), np.asarray(upper, np.int64), out,
    )
    return out if ok else None


def independent_rows(system: ConstraintSystem) -> ConstraintSystem:
    """Drop linearly dependent rows; the solution set is unchanged for a consistent system."""
    At = np.ascontiguousarray(system.A.T, dtype=np.int64)
    _, _, _, pivots, rank, status = K.rref_bareiss(At, np.zeros(At.shape[0], np.int64), np.arange(At.shape[1]))
    if status == K.RREF_OVERFLOW:
        pivots = np.array(rref_fractions(At, np.zeros(At.shape[0], np.int64))[1], np.int64)
    keep = np.sort(np.asarray(pivots, dtype=np.int64))
    rref(system)  # raises InfeasibleSystem if the dropped rows disagree
    return ConstraintSystem(
        system.A[keep].copy(), system.b[keep].copy(),
        tuple(system.provenance[i] for i in keep), system.columns,
    )


def rank_of(A: np.ndarray) -> int:
    A = np.ascontiguousarray(A, dtype=np.int64)
    _, _, _, pivots, rank, status = K.rref_bareiss(A, np.zeros(A.shape[0], np.int64), np.arange(A.shape[1]))
    if status == K.RREF_OVERFLOW:
        return len(rref_fractions(A, np.zeros(A.shape[0], np.int64))[1])
    return int(rank)
