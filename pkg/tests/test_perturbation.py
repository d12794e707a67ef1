import numpy as np
import pytest

from soliton_lab.errors import DegenerateStateError, InvalidInputError, StepRejectedError
from soliton_lab.flow_evolution import evolve_flow, flow_pde_residual
from soliton_lab.perturbation import (
    PerturbationState,
    assemble_coefficients,
    assemble_linear_step,
    energy_monitor,
    eta_inverse,
    eta_transform,
    fd_matrices,
    higher_binomial_sum,
    linear_step,
    make_initial_data,
    march,
    pde_rhs,
    pde_rhs_pointwise,
    picard_solve,
    reconstruct_and_residual,
)
from soliton_lab.soliton_ode import hc_profile
from soliton_lab.weights import WeightConfig, background_coefficients


@pytest.fixture(scope="module")
def setup():
    prof = hc_profile(4)
    x = np.linspace(20 / 500, 20, 500)
    flow = evolve_flow(prof, x, np.linspace(0, 0.02, 21))
    return flow, background_coefficients(flow), WeightConfig()


def random_points(rng, size):
    eta, xi = rng.uniform(-0.3, 0.3, (2, size))
    derivs = rng.normal(size=(3, size))
    ratio, combo, inv = rng.normal(size=(3, size))
    return eta, xi, derivs, ratio, combo, np.abs(inv)


# ---------------------------------------------------------------- transforms

def test_eta_transform_examples():
    assert eta_transform(0.0, 0.0, 4) == 0.0
    assert eta_transform(0.1, 0.05, 2) == pytest.approx(1.21 / 1.05**4 - 1, rel=1e-14)
    assert eta_transform(0.1, 0.05, 2) == pytest.approx(-0.0045300, abs=5e-8)


def test_eta_roundtrip():
    rng = np.random.default_rng(3)
    z, x = rng.uniform(-0.5, 0.5, (2, 100))
    assert np.allclose(eta_inverse(eta_transform(z, x, 3), x, 3), z, atol=1e-14)


def test_eta_transform_rejects_degenerate():
    with pytest.raises(DegenerateStateError):
        eta_transform(-1.5, 0.0, 2)


def test_higher_binomial_sum():
    xi = np.linspace(-0.5, 0.5, 11)
    for n in (2, 4, 9):
        assert np.allclose(higher_binomial_sum(xi, n), (1 + xi) ** (2 * n) - 1 - 2 * n * xi,
                           atol=1e-13)


def test_fd_matrices_exact_on_quadratics():
    s = np.sort(np.random.default_rng(0).uniform(0, 1, 30))
    D, D2 = fd_matrices(s)
    assert np.allclose(D @ s**2, 2 * s)
    assert np.allclose((D2 @ s**2)[1:-1], 2.0)


# ---------------------------------------------------------------- right-hand sides

def test_pde_rhs_zero_at_soliton(setup):
    flow, co, _ = setup
    z = np.zeros(flow.x_grid.shape)
    et, xt = pde_rhs(PerturbationState(0.0, z, z), co, 3)
    assert np.all(et == 0) and np.all(xt == 0)


def test_pure_xi_perturbation_moves_eta():
    n = 4
    k = 2 * n * (n - 1)
    xi, xs, xss, r, q, inv = 0.1, 0.3, -0.2, 0.7, 0.4, 1.3
    et, _ = pde_rhs_pointwise(0.0, xi, 0.0, xs, xss, r, q, inv, n)
    x1 = 1 + xi
    grouped = -k * (r * r * (x1 ** (-2 * n) - 1) + 2 * r * xs / x1 ** (2 * n + 1)
                    + (1 - x1**-2) * inv + xs**2 / x1 ** (2 * n + 2))
    assert et != 0
    assert et == pytest.approx(grouped, rel=1e-14)


def test_split_reproduces_nonlinear_rhs():
    """At a fixed point of the iteration the linear part plus forcing is the full field."""
    rng = np.random.default_rng(7)
    n = 4
    eta, xi, (es, xs, xss), r, c, inv = random_points(rng, 50)
    cf = assemble_coefficients(eta, xi, es, xs, r, c, inv, n, None)
    lin_e = cf["a_ee"] * eta + cf["c_ex"] * xi + cf["d_ex"] * xs + cf["f1"]
    lin_x = (cf["a_xx"] * xi + cf["b"] * xs + cf["g"] * xss + cf["c_xe"] * eta
             + cf["d_xe"] * es + cf["f2"])
    et, xt = pde_rhs_pointwise(eta, xi, es, xs, xss, r, c, inv, n)
    assert np.allclose(lin_e, et, rtol=1e-11, atol=1e-12)
    assert np.allclose(lin_x, xt, rtol=1e-11, atol=1e-12)


# ---------------------------------------------------------------- linear step

def test_assemble_zero_prev(setup):
    flow, co, _ = setup
    z = np.zeros(flow.x_grid.shape)
    p = assemble_linear_step(PerturbationState(0.0, z, z), co, 2)
    assert np.all(p.f1 == 0) and np.all(p.f2 == 0)
    assert np.all(p.g == 1.0)


def test_assemble_small_prev_diffusion_band(setup):
    flow, co, _ = setup
    u = 1e-2 * np.sin(flow.x_grid)
    p = assemble_linear_step(PerturbationState(0.0, u, u), co, 2)
    assert np.all((p.g >= 0.5) & (p.g <= 2.0))


def test_assemble_rejects_small_diffusion(setup):
    flow, co, _ = setup
    u = np.full(flow.x_grid.shape, 1.0)
    with pytest.raises(StepRejectedError):
        assemble_linear_step(PerturbationState(0.0, u, u), co, 2, g_min=0.01)


def test_linear_step_zero(setup):
    flow, co, _ = setup
    z = np.zeros(flow.x_grid.shape)
    st = PerturbationState(0.0, z, z)
    out = linear_step(assemble_linear_step(st, co, 1), st, 1e-3)
    assert np.all(out.eta == 0) and np.all(out.xi == 0)


def test_step_halving_local_error(setup):
    flow, co, _ = setup
    u = 1e-3 * np.exp(-((flow.x_grid - 2) / 0.3) ** 2)
    st = PerturbationState(0.0, u, u)
    prob = assemble_linear_step(st, co, 1)
    gaps = []
    for dt in (4e-4, 2e-4):
        one = linear_step(prob, st, dt)
        two = linear_step(prob, linear_step(prob, st, dt / 2), dt / 2)
        gaps.append(np.max(np.abs(np.concatenate([one.eta - two.eta, one.xi - two.xi]))))
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.2)


# ---------------------------------------------------------------- Picard and data

def test_picard_zero_data(setup):
    flow, co, cfg = setup
    st, e0 = make_initial_data("zero", 1e-3, (0.5, 1.5), flow, cfg)
    assert e0 == 0.0 and np.all(st.eta == 0)
    (eta, xi), rep = picard_solve(st, co, flow, cfg)
    assert rep.iterations == 1 and rep.converged
    assert np.all(eta == 0) and np.all(xi == 0)
    _, flags = energy_monitor((eta, xi), cfg, flow)
    assert flags["e_total"] == 0 and flags["bound_ok"]


def test_initial_bump_vanishes_at_corner(setup):
    flow, _, cfg = setup
    st, e0 = make_initial_data("bump", 1e-3, (0.5, 1.5), flow, cfg)
    assert st.xi[0] == 0.0 and st.xi[-1] == 0.0 and e0 > 0


def test_initial_data_support_checked(setup):
    flow, _, cfg = setup
    with pytest.raises(InvalidInputError):
        make_initial_data("bump", 1e-3, (0.0, 1.5), flow, cfg)
    with pytest.raises(InvalidInputError):
        make_initial_data("spike", 1e-3, (0.5, 1.5), flow, cfg)


@pytest.fixture(scope="module")
def picard_runs(setup):
    flow, co, cfg = setup
    out = {}
    for amp in (1e-3, 5e-4):
        st, e0 = make_initial_data("bump", amp, (0.5, 1.5), flow, cfg)
        out[amp] = picard_solve(st, co, flow, cfg)
    return out


def test_picard_small_data_converges(picard_runs):
    _, rep = picard_runs[1e-3]
    assert rep.converged
    assert all(k < 1 for k in rep.kappa_estimates)
    assert np.all(np.diff(rep.diff_energies) < 0)
    assert rep.bound_ok


def test_picard_energy_quadratic_in_amplitude(picard_runs):
    e1 = picard_runs[1e-3][1].energy.e_total
    e2 = picard_runs[5e-4][1].energy.e_total
    assert e2 / e1 == pytest.approx(0.25, rel=0.02)


def test_reconstruct_zero_series_is_background(setup):
    flow, _, _ = setup
    z = np.zeros(flow.rho.shape)
    chi, psi, rep = reconstruct_and_residual((z, z), flow, x_window=(0.25, 5.0))
    assert np.array_equal(chi, flow.chi) and np.array_equal(psi, flow.psi_t)
    bg = flow_pde_residual(flow, x_window=(0.25, 5.0), t_min=flow.t_grid[2])
    assert rep["sup_chi"] == pytest.approx(bg.res_chi, rel=1e-12)
    assert rep["sup_psi"] == pytest.approx(bg.res_psi, rel=1e-12)


def test_reconstruct_flags_corrupted_slice(setup, picard_runs):
    flow, _, _ = setup
    eta, xi = picard_runs[1e-3][0]
    bad = xi.copy()
    k = 10
    bad[k] *= 2.0
    _, _, rep = reconstruct_and_residual((eta, bad), flow)
    _, _, ref = reconstruct_and_residual((eta, xi), flow)
    spike = rep["per_slice_psi"] / ref["per_slice_psi"].max()
    assert int(np.argmax(rep["per_slice_psi"])) in (k - 1, k, k + 1)
    assert spike.max() > 5


def test_march_with_zero_iterate_is_linear(setup):
    flow, co, _ = setup
    u = 1e-3 * np.exp(-((flow.x_grid - 2) / 0.3) ** 2)
    z = np.zeros(flow.rho.shape)
    a = march(PerturbationState(0.0, u, u), co, z, z, 1e-3)
    b = march(PerturbationState(0.0, 2 * u, 2 * u), co, z, z, 1e-3)
    assert np.allclose(b[0], 2 * a[0], rtol=1e-10, atol=1e-18)
    assert np.allclose(b[1], 2 * a[1], rtol=1e-10, atol=1e-18)


def test_far_field_truncation_by_doubling_radius():
    prof = hc_profile(4)
    cfg = WeightConfig()
    energies = []
    for length, N in ((20, 500), (40, 1000)):
        flow = evolve_flow(prof, np.linspace(length / N, length, N), np.linspace(0, 0.02, 21))
        st, _ = make_initial_data("bump", 1e-3, (0.5, 1.5), flow, cfg)
        _, rep = picard_solve(st, background_coefficients(flow), flow, cfg)
        energies.append(rep.energy.e_total)
    assert abs(energies[0] - energies[1]) <= 1e-8 * energies[1]


def test_dirichlet_ends_and_max_principle(setup):
    """Pure diffusion with zero boundary data does not raise the sup-norm of xi."""
    flow, co, _ = setup
    rng = np.random.default_rng(5)
    N = len(flow.x_grid)
    u = rng.uniform(-1e-3, 1e-3, N)
    u[[0, -1]] = 0.0
    st = PerturbationState(0.0, np.zeros(N), u)
    p = assemble_linear_step(PerturbationState(0.0, np.zeros(N), np.zeros(N)), co, 1)
    z = np.zeros(N)
    for name in ("a_xx", "b", "c_xe", "d_xe", "f2", "c_ex", "d_ex", "f1"):
        setattr(p, name, z)
    p.g = 0.5 + flow.x_grid / flow.x_grid[-1]
    out = linear_step(p, st, 1e-3)
    assert abs(out.xi[0]) < 1e-15 and abs(out.xi[-1]) < 1e-15
    assert np.abs(out.xi).max() <= np.abs(u).max()


def test_transform_consistency_on_solved_series(picard_runs):
    eta, xi = picard_runs[1e-3][0]
    zeta = eta_inverse(eta, xi, 4)
    assert np.allclose(eta_transform(zeta, xi, 4), eta, atol=1e-15)
