"""Degree kernels, mixed norms and the connectivity constants.

Expected values come from hand-rolled Fraction arithmetic on the 3x3
fixture kernel, independent of the library code paths.
"""
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrcm import kernels
from mrcm.model import (BooleanDisc, BoxProfile, Factorisable, MarkDistribution, MarkGrid,
                        ModelSpec)

K = [[1, 1, 0], [1, 0, 1], [0, 1, 0]]
THIRD = Fraction(1, 3)


def frac_power(k):
    """``K (W K)^{k-1}`` with ``W = diag(1/3)`` in exact arithmetic."""
    M = [[Fraction(x) for x in row] for row in K]
    for _ in range(k - 1):
        M = [[sum(M[i][c] * THIRD * K[c][j] for c in range(3)) for j in range(3)] for i in range(3)]
    return M


def seed_oracle(lam, a, kind, k_max=64):
    r = Fraction(lam) / (1 + Fraction(lam))
    if kind == "J":
        r /= 2
    best = max(r**k * min(frac_power(k)[a]) for k in range(1, k_max + 1))
    return 1 / best


def kernel(values, weights):
    n = len(weights)
    grid = MarkGrid(tuple(range(n)), np.asarray(weights, dtype=float), None, None)
    return kernels.KernelMatrix(grid, np.asarray(values, dtype=float))


def test_D4_exact(three_mark):
    D4 = kernels.path_kernel(three_mark, 4)
    expected = [[Fraction(x, 27) for x in row] for row in ([6, 4, 3], [4, 5, 1], [3, 1, 2])]
    assert [list(r) for r in D4.exact] == expected
    assert frac_power(4) == expected


@pytest.mark.parametrize("k", [1, 2, 3, 5, 6])
def test_path_kernel_matches_oracle(three_mark, k):
    Dk = kernels.path_kernel(three_mark, k)
    assert [list(r) for r in Dk.exact] == frac_power(k)
    np.testing.assert_allclose(Dk.values, np.array(frac_power(k), dtype=float), rtol=1e-14)


def test_D4_first_power_with_all_positive_entries(three_mark):
    assert any(x == 0 for row in frac_power(3) for x in row)
    assert all(x > 0 for row in frac_power(4) for x in row)
    assert kernels.assumption_report(three_mark, 1.0).d2_witness_k == 4


def test_kernel_csv_columns(three_mark):
    text = kernels.degree_kernel(three_mark).to_csv().splitlines()
    assert text[0] == "a,b,value,numerator,denominator"
    assert text[1] == "0,0,1.0,1,1"
    assert len(text) == 10


def test_operator_norm_closed_form(three_mark):
    D = kernels.degree_kernel(three_mark)
    assert kernels.operator_norm(D) == pytest.approx(2 * math.cos(math.pi / 7) / 3, rel=1e-12)


def test_mixed_norms_of_fixture(three_mark):
    D = kernels.degree_kernel(three_mark)
    assert kernels.mixed_norm(D, math.inf, math.inf) == 1.0
    assert kernels.mixed_norm(D, 1, math.inf) == pytest.approx(2 / 3)
    assert kernels.mixed_norm(D, 1, 1) == pytest.approx(5 / 9)


def test_operator_norm_rejects_asymmetric():
    with pytest.raises(ValueError):
        kernels.operator_norm(kernel([[1, 0], [1, 1]], [0.5, 0.5]))


@pytest.mark.parametrize("lam", [1, Fraction(1, 2), 2])
@pytest.mark.parametrize("kind", ["I", "J"])
def test_seeds_match_oracle(three_mark, lam, kind):
    for a in range(3):
        s = kernels.connectivity_seed(three_mark, float(lam), a, kind)
        assert s.exact == seed_oracle(lam, a, kind)
        assert s.converged


def test_seed_values_at_unit_intensity(three_mark):
    I = [kernels.connectivity_seed(three_mark, 1.0, a, "I").exact for a in range(3)]
    J = [kernels.connectivity_seed(three_mark, 1.0, a, "J").exact for a in range(3)]
    assert I == [12, 72, 432] and J == [48, 576, 6912]


def test_cbar_exact(three_mark):
    c = kernels.derived_constants(three_mark, 1.0)
    assert c.exact["cbar"] == 1 + 1 * 1 * 6912
    assert c.cbar == 6913.0


def test_zero_intensity_conventions(three_mark):
    c = kernels.derived_constants(three_mark, 0.0)
    assert c.cbar == 1.0
    assert math.isinf(c.I_per_mark[0])


def test_seed_without_connectivity_is_infinite():
    m = ModelSpec(1, Factorisable(BoxProfile(1.0, 0.5), [[1, 0], [0, 1]]), MarkDistribution.finite([0.5, 0.5]))
    s = kernels.connectivity_seed(m, 1.0, 0, "I")
    assert math.isinf(s.value)


def test_boolean_degree_kernel_d1(boolean_d1):
    D = kernels.degree_kernel(boolean_d1)
    assert D.exact[0][0] == 2


def test_branching_susceptibility_solves_linear_system(three_mark):
    lam = 1.0
    x = kernels.branching_susceptibility(three_mark, lam)
    A = np.eye(3) - lam * np.array(K, dtype=float) / 3
    np.testing.assert_allclose(A @ x, 1.0, rtol=1e-12)
    with pytest.raises(kernels.BranchingDivergence):
        kernels.branching_susceptibility(three_mark, 1.7)


def test_envelope_lower_bound(three_mark):
    env = kernels.branching_envelope_norm(three_mark, 1.0)
    assert env.lambda_O_lower == pytest.approx(3 / (2 * math.cos(math.pi / 7)))
    assert not env.diverges
    assert kernels.branching_envelope_norm(three_mark, 2.0).diverges


def test_coarse_grain_bound():
    assert kernels.coarse_grain_bound(0.5, 1.0, 1.0, 1) == pytest.approx(math.log(2) / 0.5 * 2)
    with pytest.raises(ValueError):
        kernels.coarse_grain_bound(1.5, 1, 1, 1)


def test_triangle_verdict_three_sigma(three_mark):
    class T:
        mean, stderr = 0.0, 1e-9
    assert kernels.assumption_report(three_mark, 1.0, T).t_status == "holds"
    T.mean = 1.0
    assert kernels.assumption_report(three_mark, 1.0, T).t_status == "fails"


def test_continuous_marks_resolution_converges():
    m = ModelSpec(1, Factorisable(BoxProfile(1.0, 1.0), "product"), MarkDistribution.uniform(0.0, 1.0))
    # D(a, b) = 2ab, so ||D||_op = 2 * int a^2 = 2/3
    assert kernels.operator_norm(kernels.degree_kernel(m, 64)) == pytest.approx(2 / 3, rel=1e-3)


@st.composite
def symmetric_kernels(draw):
    n = draw(st.integers(1, 6))
    a = draw(arrays(np.float64, (n, n), elements=st.floats(0, 5)))
    w = draw(arrays(np.float64, n, elements=st.floats(0.01, 1)))
    return kernel(0.5 * (a + a.T), w / w.sum())


@settings(max_examples=200, deadline=None)
@given(symmetric_kernels())
def test_schur_ordering(h):
    assert kernels.operator_norm(h) <= kernels.mixed_norm(h, 1, math.inf) + 1e-10


@settings(max_examples=100, deadline=None)
@given(symmetric_kernels())
def test_norm_ordering(h):
    assert kernels.mixed_norm(h, 1, math.inf) <= kernels.mixed_norm(h, math.inf, math.inf) + 1e-12
    assert kernels.mixed_norm(h, 1, 1) <= kernels.mixed_norm(h, 1, math.inf) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_boolean_composition_symmetric(ra, rb):
    m = ModelSpec(2, BooleanDisc(0.05, 0.9), MarkDistribution.finite([0.3, 0.7], [ra, rb]))
    assert kernels.path_kernel(m, 3).is_symmetric()
