import dataclasses

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from soliton_lab.errors import ConfigurationError, InvalidInputError
from soliton_lab.flow_evolution import evolve_flow
from soliton_lab.perturbation import make_initial_data
from soliton_lab.soliton_ode import hc_profile
from soliton_lab.weights import (
    WeightConfig,
    background_coefficients,
    comparison_and_A_check,
    energy_functional,
    weight_ell,
    weight_grid,
    weighted_norm,
)

S = sp.Symbol("s")


@pytest.fixture(scope="module")
def hc4():
    return hc_profile(4)


@pytest.fixture(scope="module")
def flow(hc4):
    x = np.linspace(0.01, 20, 2000)
    return evolve_flow(hc4, x, np.linspace(0, 0.05, 51))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        WeightConfig(alpha=0)
    with pytest.raises(InvalidInputError):
        WeightConfig(sigma=-1)
    with pytest.raises(InvalidInputError):
        WeightConfig(case="Q")


def test_ell_inner_region(flow):
    assert weight_ell(0.1, 0.01, WeightConfig(), flow) ** 2 == pytest.approx(0.11)


def test_ell_far_region_is_one(flow):
    assert weight_ell(5.0, 0.02, WeightConfig(), flow) == 1.0
    assert np.all(weight_grid(flow, WeightConfig())[:, flow.x_grid >= 2.0] == 1.0)


def test_ell_initial_slice(flow):
    assert weight_ell(0.4, 0.0, WeightConfig(), flow) == pytest.approx(0.4)


def test_ell_continuous_at_x0(flow):
    ell = weight_grid(flow, WeightConfig())
    i = np.searchsorted(flow.x_grid, 1.0)
    assert np.max(np.abs(ell[:, i] - ell[:, i - 1])) < 0.02


def test_norm_zero(flow):
    z = np.zeros(flow.x_grid.shape)
    for k in (0, 1, 2):
        for a in (1, 3):
            assert weighted_norm(z, k, a, 0.0, WeightConfig(), flow) == 0.0


def test_norm_of_identity_on_unit_interval(hc4):
    x = np.linspace(1e-4, 1.0, 4001)
    fl = evolve_flow(hc4, x, np.array([0.0, 1e-3]))
    got = weighted_norm(x.copy(), 1, 1, 0.0, WeightConfig(x0=1.0), fl, squared=True)
    assert got == pytest.approx(2.0 * (1 - 1e-4), rel=1e-8)


def test_norm_increases_with_alpha(flow):
    u = np.exp(-((flow.x_grid - 0.5) / 0.1) ** 2)
    cfg = WeightConfig()
    t = 0.01
    assert weighted_norm(u, 1, 4, t, cfg, flow) > weighted_norm(u, 1, 2, t, cfg, flow)


def test_norm_rejects_off_grid_time(flow):
    with pytest.raises(InvalidInputError):
        weighted_norm(flow.x_grid, 0, 1, 0.0123, WeightConfig(), flow)


def test_energy_zero_and_single_slice(flow, hc4):
    cfg = WeightConfig()
    z = np.zeros(flow.rho.shape)
    assert energy_functional(z, z, cfg, flow).e_total == 0.0
    one = evolve_flow(hc4, flow.x_grid, np.array([0.0]))
    u = np.exp(-((one.x_grid - 0.5) / 0.1) ** 2)[None, :]
    rep = energy_functional(u, u, cfg, one)
    assert rep.l2_h1p1_eta == 0.0 and rep.l2_h2p1_xi == 0.0
    assert rep.linf_h1_eta == pytest.approx(weighted_norm(u[0], 1, 3, 0.0, cfg, one, squared=True))


def _profile_bump():
    """A C^5 bump on |s - 1| < 1/2 with its exact derivatives."""
    b = sp.cos(sp.pi * (S - 1)) ** 6
    return [sp.lambdify(S, sp.diff(b, S, j), "numpy") for j in range(3)]


def test_energy_matches_dense_quadrature(flow):
    """xi = t b(s) inside the region where l^2 = s^2 + sigma t exactly."""
    cfg = WeightConfig(x0=3.0)
    b = _profile_bump()
    inside = lambda s: np.abs(s - 1) < 0.5
    xi = np.where(inside(flow.s), flow.t_grid[:, None] * b[0](flow.s), 0.0)
    rep = energy_functional(np.zeros_like(xi), xi, cfg, flow)
    a, sig = cfg.alpha, cfg.sigma

    def slice_sq(t, k, alpha):
        f = lambda s: sum((t * b[j](s)) ** 2 / (s * s + sig * t) ** (alpha - j) for j in range(k + 1))
        return quad(f, 0.5, 1.5, epsabs=0, epsrel=1e-11)[0]

    T = flow.t_grid[-1]
    ts = np.linspace(0, T, 401)
    linf = max(slice_sq(t, 1, a) for t in ts)
    l2 = quad(lambda t: slice_sq(t, 2, a + 1), 0, T, epsrel=1e-10)[0]
    assert rep.linf_h1_xi == pytest.approx(linf, rel=0.01)
    assert rep.l2_h2p1_xi == pytest.approx(l2, rel=0.01)


def test_initial_energy_matches_dense_quadrature(flow):
    """At t = 0 the weight is min(x, 1) for the default half-complete configuration."""
    cfg = WeightConfig()
    st, e0 = make_initial_data("bump", 1e-3, (0.5, 1.5), flow, cfg)
    r = 2 * (S - 1)
    bump = 1e-3 * sp.exp(1 - 1 / (1 - r**2))
    f0, f1 = (sp.lambdify(S, sp.diff(bump, S, j), "numpy") for j in range(2))
    ell = lambda s: min(s, 1.0)
    part = lambda s: f0(s) ** 2 / ell(s) ** 6 + f1(s) ** 2 / ell(s) ** 4
    ref = 2 * sum(quad(part, lo, hi, epsrel=1e-12)[0] for lo, hi in ((0.5, 1.0), (1.0, 1.5)))
    assert e0 == pytest.approx(ref, rel=0.01)


def test_coefficients_initial_row(flow, hc4):
    co = background_coefficients(flow)
    p, q, inv, _, _ = hc4.ratios(flow.x_grid)
    assert np.allclose(co.c_ratio[0], p, rtol=1e-12)
    assert np.allclose(co.c_inv_psi2[0], inv, rtol=1e-12)


def test_coefficients_corner_asymptotics(hc4):
    x = np.geomspace(1e-7, 1.0, 200)
    fl = evolve_flow(hc4, x, np.array([0.0, 1e-9]))
    co = background_coefficients(fl)
    s = fl.s[0, :5]
    assert np.all(np.abs(s * co.c_ratio[0, :5] - 0.5) < 0.01)
    assert np.all(np.abs(s * s * co.c_combo[0, :5] - 0.5) < 0.02)


def test_comparison_bounds(flow):
    cfg = WeightConfig()
    rep = comparison_and_A_check(background_coefficients(flow), cfg, flow)
    assert rep.ratio_upper_bound == pytest.approx(21.0)
    assert rep.ratio_min == pytest.approx(1.0)
    assert rep.int_inv_s_ok is True
    assert rep.int_a2_monotone and rep.int_a2[0] == 0.0


def test_comparison_flags_excess_ratio(flow):
    # halving s breaks s^2 >= (sqrt(n) - 1) t, so l^2/s^2 exceeds its bound
    shrunk = dataclasses.replace(flow, s=0.5 * flow.s)
    with pytest.raises(ConfigurationError):
        comparison_and_A_check(background_coefficients(flow), WeightConfig(), shrunk)


def test_ell_continuous_at_blend_ends(flow):
    cfg = WeightConfig()
    t = 0.03
    ti = int(np.argmin(np.abs(flow.t_grid - t)))
    srow = flow.s[ti]
    s_at = lambda x: float(np.interp(x, flow.x_grid, srow))
    for xb in (cfg.x0, cfg.x0 + 1):
        lo, hi = weight_ell(s_at(xb - 1e-9), t, cfg, flow), weight_ell(s_at(xb + 1e-9), t, cfg, flow)
        assert lo == pytest.approx(hi, abs=1e-6)


def test_ell_lower_bound(flow):
    ell = weight_grid(flow, WeightConfig())
    assert np.min(ell / np.minimum(flow.s, 1.0)) >= 1.0 - 1e-12


def test_norm_homogeneous_and_additive(flow):
    cfg = WeightConfig()
    x = flow.x_grid
    u = np.where(np.abs(x - 0.6) < 0.2, np.cos(np.pi * (x - 0.6) / 0.4) ** 4, 0.0)
    v = np.where(np.abs(x - 3.0) < 0.5, np.cos(np.pi * (x - 3.0)) ** 4, 0.0)
    t = 0.02
    sq = lambda f: weighted_norm(f, 2, 3, t, cfg, flow, squared=True)
    assert sq(3 * u) == pytest.approx(9 * sq(u), rel=1e-12)
    assert sq(u + v) == pytest.approx(sq(u) + sq(v), rel=1e-10)
