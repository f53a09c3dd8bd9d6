import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_fiber, dataset, random_two_way
from fibrewalk import _kernels as K
from fibrewalk.bounds import reference_set
from fibrewalk.gfit import (
    ExplorationRecord,
    SingletonFiber,
    binary_search_sb,
    estimate_g,
    explore,
    proposal_cost,
    refine_s,
)
from fibrewalk.samplers import kind_code, sample_table_rref


def _largest_shared_prefix(fiber: np.ndarray, n: np.ndarray, free: np.ndarray) -> int:
    others = fiber[(fiber != n).any(axis=1)]
    return max(k for k in range(free.size + 1) if (others[:, free[:k]] == n[free[:k]]).all(axis=1).any())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([(3, 3), (3, 4)]))
def test_s_matches_brute_force(seed, dims):
    ds = dataset(random_two_way(np.random.default_rng(seed), dims, 9))
    rs = reference_set(ds)
    fiber = np.array([rs.sub(t) for t in brute_force_fiber(dims, ds.table.counts)])
    if len(fiber) < 2:
        return
    rng = np.random.default_rng(seed)
    n = fiber[rng.integers(len(fiber))]
    r = rs.rref(rng.permutation(rs.n_sampling))
    truth = _largest_shared_prefix(fiber, n, r.free)
    sb = binary_search_sb(rs, r, rs.full(n))
    assert sb >= truth
    assert refine_s(rs, r, rs.full(n), sb, rng) == truth


@pytest.mark.parametrize("name", ["nber_rs", "rochdale_rs"])
def test_memoised_refinement_matches_plain(name, request):
    rs = request.getfixturevalue(name)
    rng = np.random.default_rng(3)
    for i in range(4):
        s = sample_table_rref(rs, rng, "uniform")
        if not s.ok:
            continue
        r = rs.rref(rng.permutation(rs.n_sampling))
        nstar = rs.sub(s.table)
        sb = binary_search_sb(rs, r, s.table)
        args = (r.num, r.rhs, r.den, r.bound, r.free, rs.lower, rs.upper, nstar, sb,
                kind_code("uniform"), rs.log_factorials, 50)
        fast = K.refine_s(np.random.default_rng(i), *args)[0]
        plain = K.refine_s_reference(np.random.default_rng(i), *args)[0]
        assert fast == plain


def test_counter_indexing():
    rec = ExplorationRecord(np.array([2, 0, 5, 1]), 8, 8, 0, 0.0, 0.0)
    # s = 0 and s = 1 share G(1); s lands on position s - 1
    assert rec.counters.tolist() == [3, 6, 2, 1]
    g = rec.distribution()
    assert g.probs.tolist() == pytest.approx([3 / 12, 6 / 12, 2 / 12, 1 / 12])


def test_explore_gives_valid_g(tiny):
    rs = reference_set(tiny)
    rec = explore(rs, 200, np.random.default_rng(0))
    assert rec.s_counts.sum() == 200
    assert rec.counters.sum() == 200 + rs.n_free
    g = rec.distribution()
    assert (g.probs > 0).all() and g.probs.sum() == pytest.approx(1.0)
    assert proposal_cost(g) == pytest.approx(2 * (rs.n_free - g.mean))
    assert estimate_g(rs, 50, np.random.default_rng(1)).support_size == rs.n_free


def test_singleton_fiber_rejected():
    ds = dataset({"dims": [2, 2], "counts": [3, 0, 0, 2], "model": [[1], [2]], "upper": [3, 0, 0, 2]})
    with pytest.raises(SingletonFiber):
        explore(reference_set(ds), 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        explore(reference_set(dataset({"dims": [2, 2], "counts": [1, 1, 1, 1], "model": [[1], [2]]})), 0,
                np.random.default_rng(0))
