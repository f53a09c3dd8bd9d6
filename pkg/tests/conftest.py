"""Shared fixtures and brute-force oracles for small two-way fibers."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from fibrewalk.bounds import DeadEnd, cell_bounds_given, reference_set
from fibrewalk.tables import load_dataset, parse_dataset


def compositions(total: int, lower, upper):
    """Every integer vector v with lower <= v <= upper and sum(v) == total."""
    ranges = [range(lo, hi + 1) for lo, hi in zip(lower, upper)]
    for head in itertools.product(*ranges[:-1]):
        last = total - sum(head)
        if lower[-1] <= last <= upper[-1]:
            yield head + (last,)


def brute_force_fiber(dims, counts, lower=None, upper=None) -> list[tuple[int, ...]]:
    """All r x c tables with the row and column sums of ``counts`` inside the box."""
    r, c = dims
    n = np.asarray(counts).reshape(r, c)
    total = int(n.sum())
    lower = np.zeros(r * c, int) if lower is None else np.asarray(lower)
    upper = np.full(r * c, total) if upper is None else np.asarray(upper)
    lo, hi = lower.reshape(r, c), upper.reshape(r, c)
    rows = [list(compositions(int(n[i].sum()), lo[i].tolist(), hi[i].tolist())) for i in range(r)]
    col_sums = n.sum(axis=0)
    out = []
    for choice in itertools.product(*rows):
        if (np.sum(choice, axis=0) == col_sums).all():
            out.append(tuple(itertools.chain.from_iterable(choice)))
    return out


def hypergeometric_weights(tables) -> np.ndarray:
    w = np.array([math.exp(-sum(math.lgamma(v + 1) for v in t)) for t in tables])
    return w / w.sum()


def random_two_way(rng: np.random.Generator, dims, total: int, bounded: bool = False, zeros: bool = False) -> dict:
    """Random r x c dataset under independence, optionally with box bounds or a structural zero."""
    r, c = dims
    m = r * c
    counts = rng.multinomial(total, np.ones(m) / m)
    obj = {"dims": [r, c], "counts": counts.tolist(), "model": [[1], [2]]}
    if zeros:
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            i = int(rng.integers(m))
            j = int(rng.choice([k for k in range(m) if k != i]))
            counts[j] += counts[i]
            counts[i] = 0
            obj["counts"] = counts.tolist()
            empty = np.array([i])
        i = int(rng.choice(empty))
        obj["structural_zeros"] = [[i // c + 1, i % c + 1]]
    if bounded:
        upper = [int(v + rng.integers(0, 2)) for v in counts]
        lower = [int(max(0, v - rng.integers(0, 3))) for v in counts]
        if zeros:
            row, col = obj["structural_zeros"][0]
            k = (row - 1) * c + col - 1
            lower[k] = upper[k] = 0
        obj["lower"] = lower
        obj["upper"] = upper
    return obj


def pin_sequence_monotone(rs, rng) -> bool:
    """Pin cells one at a time in random order; every rounded bound may only tighten."""
    r = rs.rref()
    lo, hi = rs.lower, rs.upper
    cur = {c: (int(lo[c]), int(hi[c])) for c in range(rs.n_sampling)}
    pins = []
    for cell in rng.permutation(rs.n_sampling):
        L, U = cur[int(cell)]
        pins.append((int(cell), int(rng.integers(L, U + 1))))
        try:
            nxt = {c: cell_bounds_given(r, lo, hi, pins, c) for c in range(rs.n_sampling)}
        except DeadEnd:
            return True
        for c, b in nxt.items():
            if b.lower < cur[c][0] or b.upper > cur[c][1]:
                return False
        cur = {c: (b.lower, b.upper) for c, b in nxt.items()}
    return True


@pytest.fixture(scope="session")
def nber():
    return load_dataset("nber")


@pytest.fixture(scope="session")
def rochdale():
    return load_dataset("rochdale")


@pytest.fixture(scope="session")
def nber_rs(nber):
    return reference_set(nber)


@pytest.fixture(scope="session")
def rochdale_rs(rochdale):
    return reference_set(rochdale)


@pytest.fixture(scope="session")
def tiny():
    return load_dataset("tiny3x3")


def dataset(obj: dict):
    return parse_dataset(obj)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
