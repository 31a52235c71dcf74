import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import cumulative_simpson, simpson

from spectral_sde.basis import BasisSpec, eval_basis, evaluate_expansion, project_function

SQ2 = math.sqrt(2.0)
# int_0^1 x sqrt(2) cos(pi x) dx, mpmath at 40 digits
X_COEFF_1 = -0.28657958412537813


def test_spec_dims():
    assert BasisSpec(4).dim == 5
    assert BasisSpec.of_dim(3).level == 2
    with pytest.raises(ValueError):
        BasisSpec(-1)
    with pytest.raises(ValueError):
        BasisSpec(2, kind="haar")


def test_constant_row():
    ev = eval_basis(BasisSpec(3), np.linspace(0, 1, 7))
    np.testing.assert_array_equal(ev.values[0], 1.0)
    np.testing.assert_array_equal(ev.d1[0], 0.0)
    np.testing.assert_allclose(ev.antiderivatives[0], ev.grid)


def test_point_values():
    ev = eval_basis(BasisSpec(2), [0.25, 0.5])
    assert ev.values[1, 1] == pytest.approx(0.0, abs=1e-15)
    assert ev.values[2, 0] == pytest.approx(0.0, abs=1e-15)
    assert ev.d1[2, 0] == pytest.approx(-8.885765876316732, abs=1e-12)


def test_derivative_against_central_difference():
    h = 1e-6
    ev = eval_basis(BasisSpec(2), [0.25 - h, 0.25, 0.25 + h])
    fd = (ev.values[2, 2] - ev.values[2, 0]) / (2 * h)
    assert ev.d1[2, 1] == pytest.approx(fd, abs=1e-6)


def test_grid_outside_unit_interval():
    with pytest.raises(ValueError):
        eval_basis(BasisSpec(2), [1.1])


def test_orthonormality():
    x = np.linspace(0, 1, 10001)
    ev = eval_basis(BasisSpec(32), x)
    gram = simpson(ev.values[:, None, :] * ev.values[None, :, :], x=x, axis=2)
    np.testing.assert_allclose(gram, np.eye(33), atol=1e-10)


def test_sum_of_squares_bounded_by_twice_dimension():
    x = np.linspace(0, 1, 2001)
    for J in (0, 3, 10, 31):
        ev = eval_basis(BasisSpec(J), x)
        assert np.max(np.sum(ev.values ** 2, axis=0)) <= 2 * ev.dim + 1e-12


def test_derivatives_and_antiderivative_match_numerics():
    # five-point stencils at the interior nodes of a 1001-point grid
    x = np.linspace(0, 1, 1001)[2:-2]
    h = 1e-3
    spec = BasisSpec(5)
    ev = eval_basis(spec, x)
    shifted = {k: eval_basis(spec, x + k * h) for k in (-2, -1, 1, 2)}
    fd1 = (shifted[-2].values - 8 * shifted[-1].values + 8 * shifted[1].values - shifted[2].values) / (12 * h)
    fd2 = (-shifted[-2].values + 16 * shifted[-1].values - 30 * ev.values + 16 * shifted[1].values
           - shifted[2].values) / (12 * h * h)
    np.testing.assert_allclose(fd1, ev.d1, atol=1e-5)
    np.testing.assert_allclose(fd2, ev.d2, atol=1e-5)
    fine = np.linspace(0, 1, 20001)
    cum = cumulative_simpson(eval_basis(spec, fine).values, x=fine, axis=1, initial=0.0)
    full = eval_basis(spec, np.linspace(0, 1, 1001))
    np.testing.assert_allclose(cum[:, ::20], full.antiderivatives, atol=1e-5)


class TestProjection:
    @pytest.mark.parametrize("c", [0.0, 1.0, -2.5, 7.0])
    def test_constant(self, c):
        coeffs = project_function(lambda x: c + 0.0 * x, BasisSpec(4))
        np.testing.assert_allclose(coeffs, [c, 0, 0, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("c", [1.0, -2.5, 0.4])
    def test_constant_reproduced(self, c):
        ev = eval_basis(BasisSpec(6), np.linspace(0, 1, 101))
        values = evaluate_expansion(project_function(lambda x: c + 0.0 * x, BasisSpec(6)), ev)
        np.testing.assert_allclose(values, c, rtol=0, atol=1e-12)

    def test_basis_function(self):
        coeffs = project_function(lambda x: SQ2 * np.cos(2 * np.pi * x), BasisSpec(4))
        np.testing.assert_allclose(coeffs, [0, 0, 1, 0, 0], atol=1e-8)

    def test_identity_function(self):
        coeffs = project_function(lambda x: x, BasisSpec(1))
        assert coeffs[0] == pytest.approx(0.5, abs=1e-12)
        assert coeffs[1] == pytest.approx(X_COEFF_1, abs=1e-12)


class TestExpansion:
    def test_constant(self):
        ev = eval_basis(BasisSpec(3), np.linspace(0, 1, 5))
        np.testing.assert_allclose(evaluate_expansion([1, 0, 0, 0], ev), 1.0)

    def test_antiderivative_at_one(self):
        ev = eval_basis(BasisSpec(1), [1.0])
        assert evaluate_expansion([0, 1], ev, "antiderivative")[0] == pytest.approx(0.0, abs=1e-15)

    def test_first_derivative_finite_difference(self):
        c = np.array([0, 1, 1]) / SQ2
        h = 1e-5
        ev = eval_basis(BasisSpec(2), [0.3 - h, 0.3, 0.3 + h])
        v = evaluate_expansion(c, ev)
        assert evaluate_expansion(c, ev, 1)[1] == pytest.approx((v[2] - v[0]) / (2 * h), abs=1e-5)

    def test_length_mismatch(self):
        ev = eval_basis(BasisSpec(2), [0.5])
        with pytest.raises(ValueError):
            evaluate_expansion([1.0, 0.0], ev)

    def test_unknown_order(self):
        ev = eval_basis(BasisSpec(2), [0.5])
        with pytest.raises(ValueError):
            evaluate_expansion([1.0, 0.0, 0.0], ev, 3)

    def test_truncate_is_nested(self):
        ev = eval_basis(BasisSpec(5), np.linspace(0, 1, 9))
        np.testing.assert_array_equal(ev.truncate(3).values, eval_basis(BasisSpec(2), ev.grid).values)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(1, 12), elements=st.floats(-5, 5)))
    def test_coefficient_norm_is_function_norm(self, c):
        x = np.linspace(0, 1, 10001)
        f = evaluate_expansion(c, eval_basis(BasisSpec.of_dim(c.size), x))
        assert math.sqrt(simpson(f * f, x=x)) == pytest.approx(np.linalg.norm(c), rel=1e-8, abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(1, 12), elements=st.floats(-1, 1)))
    def test_bernstein_bound(self, c):
        if np.linalg.norm(c) == 0:
            return
        c = c / np.linalg.norm(c)
        J = c.size - 1
        x = np.linspace(0, 1, 10001)
        g1 = evaluate_expansion(c, eval_basis(BasisSpec(J), x), 1)
        assert math.sqrt(simpson(g1 * g1, x=x)) <= J * math.pi * (1 + 1e-9) + 1e-12
