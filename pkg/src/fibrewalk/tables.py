"""Table schemas, lexicographic cell indexing, marginals and dataset loading.

Coordinates are one-based at the public boundary (``lex_index``,
``lex_cell``, dataset files); flat indices are zero-based.  Cells are laid
out lexicographically with the last variable varying fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DatasetError(ValueError):
    """Malformed dataset file."""


class InvariantError(ValueError):
    """A constructed object violates one of its invariants."""


class BoundsViolation(ValueError):
    """The observed table lies outside its own cell bounds."""


@dataclass(frozen=True)
class TableSchema:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1:
            raise InvariantError("a table needs at least one variable")
        if any(d < 2 for d in dims):
            raise InvariantError(f"every variable needs at least two levels, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def strides(self) -> tuple[int, ...]:
        out = []
        acc = 1
        for d in reversed(self.dims):
            out.append(acc)
            acc *= d
        return tuple(reversed(out))

    def coords(self) -> np.ndarray:
        """Zero-based coordinates of every cell, shape (n_cells, k)."""
        grids = np.indices(self.dims).reshape(self.k, -1)
        return grids.T.copy()


def lex_index(schema: TableSchema, cell: Sequence[int]) -> int:
    """Zero-based flat index of a one-based coordinate tuple."""
    if len(cell) != schema.k:
        raise ValueError(f"expected {schema.k} coordinates, got {len(cell)}")
    idx = 0
    for c, d, s in zip(cell, schema.dims, schema.strides):
        c = int(c)
        if not 1 <= c <= d:
            raise ValueError(f"coordinate {c} outside 1..{d}")
        idx += (c - 1) * s
    return idx


def lex_cell(schema: TableSchema, index: int) -> tuple[int, ...]:
    """Inverse of :func:`lex_index`."""
    index = int(index)
    if not 0 <= index < schema.n_cells:
        raise ValueError(f"flat index {index} outside 0..{schema.n_cells - 1}")
    out = []
    for d, s in zip(schema.dims, schema.strides):
        out.append(index // s + 1)
        index %= s
    return tuple(out)


@dataclass(frozen=True)
class Table:
    schema: TableSchema
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if counts.size != self.schema.n_cells:
            raise InvariantError(
                f"table has {counts.size} counts but the schema has {self.schema.n_cells} cells"
            )
        if (counts < 0).any():
            raise InvariantError("counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def array(self) -> np.ndarray:
        return self.counts.reshape(self.schema.dims)


@dataclass(frozen=True)
class BoundsSpec:
    """Per-cell lower and upper bounds.  Structural zeros have lower = upper = 0."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.int64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.int64).reshape(-1)
        if lo.shape != hi.shape:
            raise InvariantError("lower and upper bounds differ in length")
        if (lo < 0).any():
            raise InvariantError("lower bounds must be nonnegative")
        if (lo > hi).any():
            bad = int(np.flatnonzero(lo > hi)[0])
            raise InvariantError(f"lower bound exceeds upper bound at cell {bad}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, n_cells: int, total: int) -> "BoundsSpec":
        return cls(np.zeros(n_cells, np.int64), np.full(n_cells, total, np.int64))

    @property
    def structural_zeros(self) -> np.ndarray:
        return np.flatnonzero(self.upper == 0)

    def contains(self, counts: np.ndarray) -> bool:
        counts = np.asarray(counts)
        return bool(((counts >= self.lower) & (counts <= self.upper)).all())


@dataclass(frozen=True)
class ModelSpec:
    """Generating class of a hierarchical log-linear model.

    Generators are stored as sorted tuples of zero-based variable indices.
    """

    generators: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        gens = []
        for g in self.generators:
            g = tuple(sorted(int(v) for v in g))
            if not g:
                raise InvariantError("model generators must be nonempty")
            if len(set(g)) != len(g):
                raise InvariantError(f"generator {g} repeats a variable")
            gens.append(g)
        if len(set(gens)) != len(gens):
            raise InvariantError("duplicate generators in model")
        object.__setattr__(self, "generators", tuple(gens))

    @classmethod
    def from_one_based(cls, generators: Iterable[Iterable[int]]) -> "ModelSpec":
        return cls(tuple(tuple(int(v) - 1 for v in g) for g in generators))

    def check(self, schema: TableSchema) -> None:
        for g in self.generators:
            if any(not 0 <= v < schema.k for v in g):
                raise InvariantError(f"generator {g} refers to a variable outside 0..{schema.k - 1}")

    def interaction_terms(self) -> set[tuple[int, ...]]:
        """All subsets of the generators (the hierarchical closure), including ()."""
        from itertools import combinations

        terms: set[tuple[int, ...]] = set()
        for g in self.generators:
            for r in range(len(g) + 1):
                terms.update(combinations(g, r))
        return terms


def all_two_way(k: int) -> ModelSpec:
    return ModelSpec(tuple((i, j) for i in range(k) for j in range(i + 1, k)))


def marginal(table: Table | np.ndarray, subset: Iterable[int], schema: TableSchema | None = None) -> np.ndarray:
    """Marginal table over the zero-based variables in ``subset``.

    The result is an array over the kept variables in increasing variable
    order; the empty subset gives a 0-d array holding the grand total.
    """
    if isinstance(table, Table):
        schema = table.schema
        counts = table.counts
    else:
        counts = np.asarray(table)
        if schema is None:
            raise ValueError("a schema is needed for a bare count vector")
    keep = sorted(set(int(v) for v in subset))
    if any(not 0 <= v < schema.k for v in keep):
        raise ValueError(f"subset {keep} outside 0..{schema.k - 1}")
    drop = tuple(v for v in range(schema.k) if v not in keep)
    return counts.reshape(schema.dims).sum(axis=drop)


@dataclass(frozen=True)
class Dataset:
    schema: TableSchema
    table: Table
    bounds: BoundsSpec
    model: ModelSpec
    name: str = ""
    variables: tuple[str, ...] = field(default_factory=tuple)

    def __iter__(self):
        # allows ``schema, table, bounds, model = load_dataset(...)``
        return iter((self.schema, self.table, self.bounds, self.model))


def _int_list(raw, what: str, length: int | None = None) -> list[int]:
    if not isinstance(raw, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
        raise DatasetError(f"'{what}' must be a list of integers")
    if length is not None and len(raw) != length:
        raise DatasetError(f"'{what}' has {len(raw)} entries, expected {length}")
    return raw


def parse_dataset(obj: dict, name: str = "") -> Dataset:
    """Build a :class:`Dataset` from the decoded JSON object."""
    if not isinstance(obj, dict):
        raise DatasetError("dataset must be a JSON object")
    for key in ("dims", "counts", "model"):
        if key not in obj:
            raise DatasetError(f"dataset is missing '{key}'")
    try:
        schema = TableSchema(tuple(_int_list(obj["dims"], "dims")))
    except InvariantError as exc:
        raise DatasetError(str(exc)) from exc
    m = schema.n_cells
    counts = np.array(_int_list(obj["counts"], "counts", m), dtype=np.int64)
    table = Table(schema, counts)
    total = table.total

    lower = obj.get("lower")
    upper = obj.get("upper")
    lo = np.zeros(m, np.int64) if lower is None else np.array(_int_list(lower, "lower", m), np.int64)
    if upper is None:
        hi = np.full(m, total, np.int64)
    else:
        hi = np.array(_int_list(upper, "upper", m), np.int64)
        # negative upper entries stand for "no upper bound"
        hi = np.where(hi < 0, total, np.minimum(hi, total))
    for coord in obj.get("structural_zeros") or []:
        try:
            i = lex_index(schema, coord)
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"bad structural zero coordinate {coord!r}: {exc}") from exc
        lo[i] = 0
        hi[i] = 0
    bounds = BoundsSpec(lo, hi)
    if not bounds.contains(counts):
        bad = np.flatnonzero((counts < bounds.lower) | (counts > bounds.upper))
        cells = [lex_cell(schema, i) for i in bad[:5]]
        raise BoundsViolation(f"observed counts violate their bounds at cells {cells}")

    raw_model = obj["model"]
    if not isinstance(raw_model, list) or not raw_model:
        raise DatasetError("'model' must be a nonempty list of variable lists")
    try:
        model = ModelSpec.from_one_based(_int_list(g, "model generator") for g in raw_model)
        model.check(schema)
    except InvariantError as exc:
        raise DatasetError(str(exc)) from exc
    return Dataset(schema, table, bounds, model, name=obj.get("name", name), variables=tuple(obj.get("variables", ())))


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset file.  Bundled names (``nber``, ``rochdale``, ...) are accepted too."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("fibrewalk") / "data" / (p.stem + ".json")
        if bundled.is_file():
            return parse_dataset(json.loads(bundled.read_text()), name=p.stem)
        raise FileNotFoundError(path)
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{p}: line {exc.lineno}: {exc.msg}") from exc
    return parse_dataset(obj, name=p.stem)


def dump_dataset(ds: Dataset) -> dict:
    return {
        "name": ds.name,
        "dims": list(ds.schema.dims),
        "counts": ds.table.counts.tolist(),
        "lower": ds.bounds.lower.tolist(),
        "upper": ds.bounds.upper.tolist(),
        "structural_zeros": None,
        "model": [[v + 1 for v in g] for g in ds.model.generators],
    }
