import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibrewalk.bounds import reference_set
from fibrewalk.mcmc import (
    ChainState,
    Counters,
    GDistribution,
    mh_step,
    reverse_path_prob,
    run_chain,
    sample_neighbor,
)


@given(st.lists(st.integers(0, 50), min_size=1, max_size=30))
def test_g_from_counts_is_positive_and_normalised(counts):
    g = GDistribution.from_counts(np.array(counts) + 1)
    assert (g.probs > 0).all()
    assert g.probs.sum() == pytest.approx(1.0)
    assert g.cdf[-1] == pytest.approx(1.0)
    assert g.proposal_cost() == pytest.approx(2 * (g.support_size - g.mean))


def test_g_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        GDistribution(np.array([0.5, 0.5, 0.0]))
    with pytest.raises(ValueError):
        GDistribution(np.array([0.5, 0.6]))
    g = GDistribution.from_counts([1, 3, 6])
    path = tmp_path / "g.json"
    g.save(path)
    assert json.loads(path.read_text())["support_size"] == 3
    again = GDistribution.load(path)
    assert np.allclose(again.probs, g.probs) and again.mode == 2
    u = GDistribution.uniform(4)
    draws = [u.sample(np.random.default_rng(i)) for i in range(200)]
    assert set(draws) <= {0, 1, 2, 3}


def test_forward_and_reverse_probabilities_agree(nber_rs):
    rs = nber_rs
    rng = np.random.default_rng(11)
    state = ChainState(rs.observed.counts)
    checked = 0
    for _ in range(60):
        order = rng.permutation(rs.n_sampling)
        M = int(rng.integers(rs.n_free))
        prop = sample_neighbor(rs, state, order, M, "reciprocal", rng)
        if not prop.sampled.ok:
            continue
        new = prop.sampled.table
        assert rs.contains(new)
        back = reverse_path_prob(rs, new, state, order, M, "reciprocal")
        assert back == pytest.approx(prop.log_reverse, abs=1e-9)
        fwd = reverse_path_prob(rs, state.table, ChainState(new), order, M, "reciprocal")
        assert fwd == pytest.approx(prop.sampled.log_prob, abs=1e-9)
        state = ChainState(new)
        checked += 1
    assert checked > 30


def test_mh_steps_stay_in_fiber(tiny):
    rs = reference_set(tiny)
    g = GDistribution.uniform(rs.n_free)
    rng = np.random.default_rng(4)
    counters = Counters()
    state = ChainState(tiny.table.counts)
    for _ in range(300):
        state, outcome = mh_step(rs, state, g, rng, counters=counters)
        assert outcome in {"accepted", "rejected", "failed"}
        assert rs.contains(state.table)
    assert counters.iterations == 300
    assert 0 < counters.acceptance_rate <= 1
    assert counters.lp_solves > 0


def test_compiled_chain_is_deterministic_and_valid(nber_rs):
    rs = nber_rs
    g = GDistribution.uniform(rs.n_free)
    weights = np.random.default_rng(0).integers(1, 10**6, rs.n_cells)
    a = run_chain(rs, g, np.random.default_rng(9), 400, 100, code_weights=weights)
    b = run_chain(rs, g, np.random.default_rng(9), 400, 100, code_weights=weights)
    assert np.array_equal(a.visit_codes, b.visit_codes)
    assert a.counters == b.counters and a.counters.iterations == 400
    assert a.failed_check == 0
    assert rs.contains(a.final.table)
    assert a.visit_codes[-1] == int(weights @ a.final.table)


def test_python_chain_records_callback(tiny):
    rs = reference_set(tiny)
    g = GDistribution.uniform(rs.n_free)
    res = run_chain(rs, g, np.random.default_rng(1), 50, 10, callback=lambda t: int(t.sum()))
    assert res.trace == [tiny.table.total] * 40


def test_run_chain_rejects_bad_arguments(tiny):
    rs = reference_set(tiny)
    g = GDistribution.uniform(rs.n_free)
    with pytest.raises(ValueError):
        run_chain(rs, g, np.random.default_rng(0), 10, 20)
    with pytest.raises(ValueError):
        run_chain(rs, GDistribution.uniform(rs.n_free + 1), np.random.default_rng(0), 10)
    with pytest.raises(ValueError):
        run_chain(rs, g, np.random.default_rng(0), 10, start=ChainState(np.zeros(9, np.int64)))
