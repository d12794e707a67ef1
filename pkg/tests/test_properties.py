import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from soliton_lab.perturbation import eta_inverse, eta_transform, higher_binomial_sum
from soliton_lab.soliton_ode import jacobian, numerical_jacobian, ode_rhs, source_x0, steady_rhs

unit = st.floats(-1.0, 1.0, allow_nan=False)
small = st.floats(-0.5, 0.5, allow_nan=False)
dims = st.integers(2, 12)


@given(unit, unit, dims)
def test_lyapunov_derivative_of_field(x, y, n):
    """Along the steady field d(X^2 + Y^2)/dy = 2 X^2 (X^2 + Y^2 - 1)."""
    dx, dy = steady_rhs(x, y, n)
    L = x * x + y * y
    assert np.isclose(2 * x * dx + 2 * y * dy, 2 * x * x * (L - 1), atol=1e-12)


@given(unit, unit, dims, st.floats(-2, 2))
def test_invariant_planes(x, y, n, lam):
    assert ode_rhs((0.0, x, y), n, lam)[0] == 0.0
    assert ode_rhs((x, y, 0.0), n, lam)[2] == 0.0


@given(unit, unit, dims)
def test_steady_field_is_w_zero_slice(x, y, n):
    w = ode_rhs((0.0, x, y), n, 0.0)
    assert np.allclose(steady_rhs(x, y, n), (w[1], w[2]), atol=0)


@given(unit, unit, unit, dims, st.floats(-2, 2))
@settings(max_examples=50)
def test_jacobian_matches_differences(w, x, y, n, lam):
    assert np.allclose(jacobian((w, x, y), n, lam), numerical_jacobian((w, x, y), n, lam),
                       atol=1e-6)


@given(st.floats(1e-6, 0.7))
def test_start_curve_inside_disk(y0):
    x0 = source_x0(y0)
    assert 0.5 <= x0 < 1
    assert x0 * x0 + y0 * y0 <= 1.0


@given(small, small, dims)
def test_eta_roundtrip(z, x, n):
    assert np.isclose(eta_inverse(eta_transform(z, x, n), x, n), z, atol=1e-12)


@given(small, dims)
def test_binomial_remainder(xi, n):
    assert np.isclose(higher_binomial_sum(xi, n), (1 + xi) ** (2 * n) - 1 - 2 * n * xi,
                      atol=1e-12)
