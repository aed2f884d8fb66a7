"""Score binning, bin probabilities, importance weights and bound diagnostics."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import reweight_properties, two_bin_reference
from mins.reweight import (TAU_FLOOR, ReweightConfig, adaptive_tau, bin_scores, bound_terms, build_scheme,
                           compute_bin_weights, importance_weights, renyi_d2, training_weights)


# -- binning -----------------------------------------------------------------


def test_identical_scores_share_one_bin():
    for bins in (1, 3, 20):
        _, counts = bin_scores(np.full(17, 2.5), bins)
        assert counts.sum() == 17 and (counts > 0).sum() == 1


def test_integer_scores_one_per_bin():
    _, counts = bin_scores(np.arange(10.0), 10)
    np.testing.assert_array_equal(counts, np.ones(10))


def test_max_lands_in_top_bin():
    edges, counts = bin_scores(np.array([0.0, 0.5, 1.0]), 4)
    assert counts[-1] == 1


def test_uniform_scores_fill_bins_evenly():
    y = np.random.default_rng(0).uniform(size=100_000)
    _, counts = bin_scores(y, 20)
    assert np.all(np.abs(counts - 5000) <= 0.05 * 5000)


def test_bin_errors():
    with pytest.raises(ValueError):
        bin_scores(np.ones(3), 0)
    with pytest.raises(ValueError):
        bin_scores(np.zeros(0), 5)


# -- bin probabilities -------------------------------------------------------


def test_two_bin_example():
    p0, p1, w_top, w_low = two_bin_reference()
    p = compute_bin_weights([0.9, 0.1], [0.0, 1.0], y_star=1.0, lam=0.003, tau=1.0)
    assert p[0] == pytest.approx(p0, abs=1e-9) and p[1] == pytest.approx(p1, abs=1e-9)
    assert p[0] == pytest.approx(0.274, abs=1e-3)
    # same example through the dataset path: 90 records at 0, 10 at 1, two bins
    y = np.array([0.0] * 90 + [1.0] * 10)
    scheme = build_scheme(y, bins=2, lam=0.003, tau=1.0)
    np.testing.assert_allclose(scheme.centers, [0.25, 0.75])
    # bin centers differ from the hand example, so compare weights computed from
    # those centers instead
    w = importance_weights(scheme, y)
    assert len(set(w[:90])) == 1 and len(set(w[90:])) == 1
    p_ds = compute_bin_weights([90, 10], [0.0, 1.0], 1.0, 0.003, 1.0)
    assert p_ds[1] / 0.1 == pytest.approx(w_top, abs=1e-9)
    assert p_ds[0] / 0.9 == pytest.approx(w_low, abs=1e-9)
    assert w_top == pytest.approx(7.26, abs=5e-3) and w_low == pytest.approx(0.305, abs=5e-4)


def test_single_nonempty_bin():
    np.testing.assert_array_equal(compute_bin_weights([0, 5, 0], [0, 1, 2], 2.0), [0, 1, 0])


def test_degenerate_limits_are_uniform_over_nonempty_bins():
    p = compute_bin_weights([1, 0, 30, 500], [0, 1, 2, 3], 3.0, lam=1e-300, tau=1e300)
    np.testing.assert_allclose(p, [1 / 3, 0, 1 / 3, 1 / 3], rtol=0, atol=1e-12)


def test_small_tau_does_not_underflow():
    p = compute_bin_weights([3, 3, 3], [0.0, 1.0, 2.0], 2.0, tau=1e-6)
    np.testing.assert_allclose(p, [0, 0, 1], atol=1e-12)


def test_weight_errors():
    with pytest.raises(ValueError):
        compute_bin_weights([0, 0], [0, 1], 1.0)
    with pytest.raises(ValueError):
        compute_bin_weights([1, 1], [0, 1], 1.0, lam=0.0)
    with pytest.raises(ValueError):
        compute_bin_weights([1, 1], [0, 1], 1.0, tau=-1.0)


@pytest.mark.parametrize("seed", range(1000))
def test_reweight_properties(seed):
    props = reweight_properties(seed)
    assert all(props.values()), props


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=300), st.integers(1, 30))
def test_weights_are_bin_constant_and_average_one(ys, bins):
    y = np.array(ys)
    scheme = build_scheme(y, bins)
    w = importance_weights(scheme, y)
    assert w.mean() == pytest.approx(1.0, abs=1e-9)
    idx = scheme.bin_index(y)
    for b in np.unique(idx):
        assert np.ptp(w[idx == b]) == 0


def test_upweights_high_scores():
    y = np.random.default_rng(1).normal(size=2000)
    w = importance_weights(build_scheme(y), y)
    assert w[np.argmax(y)] > 1.0
    assert np.average(y, weights=w) > y.mean() + 1.0


def test_record_outside_bins_errors():
    scheme = build_scheme(np.array([0.0, 1.0]), 2)
    with pytest.raises(ValueError):
        importance_weights(scheme, np.array([2.0]))


def test_training_weights_disabled_is_ones():
    y = np.random.default_rng(0).normal(size=30)
    np.testing.assert_array_equal(training_weights(y, ReweightConfig(enabled=False)), np.ones(30))
    assert not np.allclose(training_weights(y), 1.0)
    with pytest.raises(ValueError):
        ReweightConfig(bins=0)


# -- adaptive temperature ----------------------------------------------------


def test_adaptive_tau_examples():
    assert adaptive_tau(np.arange(101.0)) == pytest.approx(10.0)
    assert adaptive_tau(np.full(5, 3.0)) == TAU_FLOOR
    u = np.random.default_rng(0).uniform(size=100_000)
    assert adaptive_tau(u) == pytest.approx(0.10, abs=0.01)


# -- divergence and bound terms ----------------------------------------------


def test_renyi_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert renyi_d2(p, p) == pytest.approx(1.0)
    delta = np.eye(8)[3]
    assert renyi_d2(delta, np.full(8, 1 / 8)) == pytest.approx(8.0)
    with pytest.raises(ValueError):
        renyi_d2([0.5, 0.5], [1.0, 0.0])


@pytest.mark.parametrize("seed", range(20))
def test_renyi_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
    direct = 0.0
    for pi, qi in zip(p.tolist(), q.tolist()):
        direct += qi * (pi / qi) ** 2
    assert renyi_d2(p, q) == pytest.approx(direct, abs=1e-12)
    assert renyi_d2(p, q) >= 1.0 - 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_bound_terms_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    B = int(rng.integers(1, 7))
    counts = rng.integers(1, 20, size=B).astype(float)
    p, p_star = rng.dirichlet(np.ones(B)), rng.dirichlet(np.ones(B))
    p_data = counts / counts.sum()
    r = bound_terms(p, p_star, p_data, counts, int(counts.sum()))
    var = sum(pi / ni for pi, ni in zip(p.tolist(), counts.tolist()))
    div = sum(qi * (pi / qi) ** 2 for pi, qi in zip(p.tolist(), p_data.tolist())) / counts.sum()
    tv = 0.5 * sum(abs(a - b) for a, b in zip(p_star.tolist(), p.tolist()))
    assert (r.variance_term, r.divergence_term, r.bias_term) == pytest.approx((var, div, tv ** 2), abs=1e-12)


def test_bound_terms_examples():
    counts = np.array([40.0, 30.0, 30.0])
    p = counts / 100
    assert bound_terms(p, p, p, counts, 100).bias_term == 0.0
    counts = np.array([99.0, 1.0])
    delta = np.array([0.0, 1.0])
    assert bound_terms(delta, delta, counts / 100, counts, 100).variance_term == 1.0
    with pytest.raises(ValueError):
        bound_terms(np.array([0.5, 0.5]), delta, counts / 100, np.array([1.0, 0.0]), 100)


def test_bound_report_json_keys():
    r = bound_terms(np.array([1.0]), np.array([1.0]), np.array([1.0]), np.array([3.0]), 3)
    assert set(json.loads(r.to_json())) == {"variance_term", "divergence_term", "bias_term"}
