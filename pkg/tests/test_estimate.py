"""Estimators: size histograms, two-point tables, triangle, exact small clusters."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrcm import estimate
from mrcm.estimate import ClusterSizeDistribution, Estimate, TwoPointTable
from mrcm.simulate import ExplorationConfig, run_batch

SIZES = st.lists(st.integers(1, 50), min_size=2, max_size=200)


def test_estimate_from_values():
    e = Estimate.from_values([1.0, 2.0, 3.0])
    assert e.mean == 2.0 and e.stderr == pytest.approx(1 / math.sqrt(3))
    assert e.z(2.0) == 0.0


def test_chi_and_theta_from_sizes():
    h = ClusterSizeDistribution().fit(np.array([1, 1, 2, 4]))
    assert h.chi().mean == 2.0
    assert h.survival().mean == 0.0


def test_capped_runs_flag_chi(boolean_d1):
    b = run_batch(boolean_d1, 0.5, 0, 500, seed=1, cfg=ExplorationConfig(size_cap=3), mode="branching")
    e = estimate.estimate_chi(b)
    assert estimate.CAP_TRUNCATION in e.bias_flags
    th = estimate.estimate_theta(b)
    assert th.mean == pytest.approx(np.mean(b.sizes == 3))


def test_tail_refuses_points_at_cap(boolean_d1):
    b = run_batch(boolean_d1, 0.5, 0, 200, seed=1, cfg=ExplorationConfig(size_cap=10), mode="branching")
    with pytest.raises(ValueError):
        estimate.estimate_cluster_tail(b, [2, 10])
    tail = estimate.estimate_cluster_tail(b, [1, 2, 9])
    assert tail[0][1].mean == 1.0


@settings(max_examples=100, deadline=None)
@given(SIZES, SIZES)
def test_partial_fit_is_order_free(x, y):
    a = ClusterSizeDistribution().fit(np.array(x)).partial_fit(np.array(y))
    b = ClusterSizeDistribution().fit(np.array(y)).partial_fit(np.array(x))
    c = ClusterSizeDistribution().fit(np.array(x + y))
    for h in (a, b):
        assert h.chi().mean == pytest.approx(c.chi().mean)
        assert h.chi().stderr == pytest.approx(c.chi().stderr)


@settings(max_examples=100, deadline=None)
@given(SIZES, st.floats(1e-4, 0.6))
def test_magnetization_bounded_and_monotone(x, g):
    h = ClusterSizeDistribution().fit(np.array(x))
    M1 = h.magnetization(g)[0].mean
    M2 = h.magnetization(g * 1.5)[0].mean
    assert 0 <= M1 <= M2 + 1e-12 <= 1 + 1e-12


@settings(max_examples=50, deadline=None)
@given(SIZES)
def test_tail_is_nonincreasing(x):
    h = ClusterSizeDistribution().fit(np.array(x))
    vals = [e.mean for _, e in h.tail(list(range(1, 52)))]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_magnetization_transform_formula():
    s = np.array([1, 2, 3])
    res = estimate.estimate_magnetization(s, 0.5)
    assert res["M"].mean == pytest.approx(np.mean([0.5, 0.75, 0.875]))
    assert res["ghost_free_chi"].mean == pytest.approx(np.mean([0.5, 0.5, 0.375]))


def test_gamma_outside_unit_interval():
    with pytest.raises(ValueError):
        estimate.estimate_magnetization(np.array([1, 2]), 0.0)


def test_two_point_table_integral():
    t = TwoPointTable.from_function(lambda i, j, r: (r < 1.0).astype(float), 1, 0.05, 4.0)
    assert t.mecke_sum(0)[0] == pytest.approx(2.0)


def test_triangle_of_indicator():
    # tau = 1{|x| < 1} in d = 1: (tau * tau * tau)(0) = int_{-1}^{1} (2 - |y|) dy = 3
    t = TwoPointTable.from_function(lambda i, j, r: (r < 1.0).astype(float), 1, 0.01, 4.0, lam=1.0)
    e = estimate.estimate_triangle(t)
    assert e.mean == pytest.approx(3.0, rel=0.02)
    assert e.extra["discretisation_gap"] < 0.1


def test_triangle_zero_intensity():
    t = TwoPointTable.from_function(lambda i, j, r: np.exp(-r), 1, 0.1, 3.0)
    assert estimate.estimate_triangle(t, 0.0).mean == 0.0


def test_two_point_zero_intensity_is_phi(three_mark):
    t = estimate.estimate_two_point(three_mark, 0.0, 0.25, 2.0, 10, seed=1)
    np.testing.assert_allclose(t.tau_at(0, 1, np.array([0.125])), 0.5)
    assert t.tau[1, 1].max() == 0.0


def test_two_point_csv_columns(boolean_d1):
    t = estimate.estimate_two_point(boolean_d1, 0.2, 0.5, 1.0, 50, seed=1)
    lines = t.to_csv().splitlines()
    assert lines[0] == "mark_a,mark_b,r_bin,tau,stderr" and len(lines) == 3


@pytest.mark.parametrize("lam", [0.25, 0.5])
def test_exact_law_hand_formulas(boolean_d1, lam):
    assert estimate.exact_small_cluster_prob(boolean_d1, lam, 0, 0) == pytest.approx(math.exp(-2 * lam))
    two = 2 * math.exp(-2 * lam) * (1 - math.exp(-lam))
    assert estimate.exact_small_cluster_prob(boolean_d1, lam, 0, 1) == pytest.approx(two, rel=1e-6)


def test_exact_law_probabilities_bounded(boolean_d1):
    ps = [estimate.exact_small_cluster_prob(boolean_d1, 0.5, 0, n) for n in range(3)]
    assert all(0 < p < 1 for p in ps) and sum(ps) < 1


def test_exact_law_finite_marks(three_mark):
    p0 = estimate.exact_small_cluster_prob(three_mark, 1.0, 2, 0)
    # root of mark 2 only sees mark 1 with mean degree 1/3
    assert p0 == pytest.approx(math.exp(-1 / 3))


def test_identity_checks_reject_foreign_table(boolean_d1, three_mark):
    t = estimate.estimate_two_point(boolean_d1, 0.2, 0.5, 1.0, 10, seed=1)
    chi = Estimate(1.0, 0.1, 10)
    with pytest.raises(ValueError):
        estimate.identity_checks(chi, t, np.array([1, 2]), 0.3, [0.1])
    with pytest.raises(ValueError):
        estimate.identity_checks(chi, t, np.array([1, 2]), 0.2, [0.1], model=three_mark)
