"""Perturbations of the evolving soliton and their Picard iteration.

A nearby Ricci flow ``chi~ dx^2 + psi~^2 g_{S^n}`` is written as
``chi~ = (zeta + 1) chi`` and ``psi~ = (xi + 1) psi``; the variable
``eta = (zeta + 1)^2 / (xi + 1)^{2n} - 1`` replaces zeta so that the eta
equation carries no second derivatives.  The system for (eta, xi) is a pointwise
ODE in eta coupled to a parabolic equation in xi.  Each Picard iterate solves a
linear version in which the most singular lower-order terms act on the new
iterate, and everything else is frozen at the previous one.

All fields live on the fixed x nodes of a :class:`FlowField` whose time grid is
the (uniform) time-step grid of the solver.
"""

from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    DegenerateStateError,
    InvalidInputError,
    NumericalBlowupError,
    SingularSystemError,
    StepRejectedError,
)
from .flow_evolution import rf_residual_fields
from .weights import EnergyReport, energy_functional, initial_energy, weight_grid


# ---------------------------------------------------------------- transforms

def eta_transform(zeta, xi, n):
    """``eta = (zeta + 1)^2 / (xi + 1)^{2n} - 1``."""
    zeta, xi = np.asarray(zeta, dtype=float), np.asarray(xi, dtype=float)
    if np.any(zeta + 1 <= 0) or np.any(xi + 1 <= 0):
        raise DegenerateStateError("zeta + 1 and xi + 1 must be positive")
    out = (zeta + 1.0) ** 2 / (xi + 1.0) ** (2 * n) - 1.0
    return out if out.ndim else float(out)


def eta_inverse(eta, xi, n):
    """Positive root ``zeta = sqrt((eta + 1)(xi + 1)^{2n}) - 1``."""
    eta, xi = np.asarray(eta, dtype=float), np.asarray(xi, dtype=float)
    if np.any(eta + 1 <= 0) or np.any(xi + 1 <= 0):
        raise DegenerateStateError("eta + 1 and xi + 1 must be positive")
    out = np.sqrt((eta + 1.0) * (xi + 1.0) ** (2 * n)) - 1.0
    return out if out.ndim else float(out)


def higher_binomial_sum(xi, n):
    """``sum_{j=2}^{2n} C(2n, j) xi^j = (1 + xi)^{2n} - 1 - 2n xi``, summed directly."""
    xi = np.asarray(xi, dtype=float)
    total = np.zeros_like(xi)
    for j in range(2 * n, 1, -1):
        total = (total + comb(2 * n, j)) * xi
    return total * xi


# ---------------------------------------------------------------- pointwise right-hand sides

def pde_rhs_pointwise(eta, xi, eta_s, xi_s, xi_ss, ratio, combo, inv_psi2, n):
    """Right-hand sides of the (eta, xi) system from given values and derivatives.

    ``ratio = psi_s/psi``, ``combo = psi_ss/psi + (n-1) psi_s^2/psi^2`` and
    ``inv_psi2 = 1/psi^2`` are the background coefficients.
    """
    e1, x1 = eta + 1.0, xi + 1.0
    r2 = ratio * ratio
    k = 2.0 * n * (n - 1)
    inv_sq_term = (1.0 - x1**-2) * inv_psi2
    eta_t = (-k * (r2 * (x1 ** (-2 * n) - 1.0) + 2.0 * ratio * xi_s / x1 ** (2 * n + 1)
                   + inv_sq_term + xi_s**2 / x1 ** (2 * n + 2))
             - k * inv_sq_term * eta + k * r2 * eta)
    xi_t = (combo * (1.0 / (e1 * x1 ** (2 * n - 1)) - x1)
            + (n - 1) * inv_psi2 * (x1 - 1.0 / x1)
            + n * ratio * xi_s / (e1 * x1 ** (2 * n))
            + xi_ss / (e1 * x1 ** (2 * n))
            - xi_s**2 / (e1 * x1 ** (2 * n + 1))
            - 0.5 * ratio * eta_s / (e1**2 * x1 ** (2 * n - 1))
            - 0.5 * eta_s * xi_s / (e1**2 * x1 ** (2 * n)))
    return eta_t, xi_t


def zeta_xi_rhs_pointwise(zeta, xi, zeta_s, xi_s, xi_ss, ratio, q, inv_psi2, n):
    """Right-hand sides of the system for (zeta, xi) before the eta substitution.

    ``q = psi_ss/psi`` here (not the combination used by :func:`pde_rhs_pointwise`).
    """
    z1, x1 = zeta + 1.0, xi + 1.0
    combo = q + (n - 1) * ratio * ratio
    zeta_t = (n * q * (1.0 / z1 - z1) + 2 * n * ratio * xi_s / (z1 * x1)
              + n * xi_ss / (z1 * x1) - n * ratio * zeta_s / z1**2
              - n * zeta_s * xi_s / (z1**2 * x1))
    xi_t = (combo * (x1 / z1**2 - x1) + (n - 1) * inv_psi2 * (x1 - 1.0 / x1)
            + 2 * n * ratio * xi_s / z1**2 + xi_ss / z1**2
            + (n - 1) * xi_s**2 / (z1**2 * x1)
            - ratio * zeta_s * x1 / z1**3 - zeta_s * xi_s / z1**3)
    return zeta_t, xi_t


# ---------------------------------------------------------------- finite differences on nodes

def fd_matrices(s):
    """Second-order first- and second-derivative matrices on the nodes ``s``.

    The first-derivative matrix uses one-sided three-point stencils at the ends;
    the second-derivative matrix has empty end rows.
    """
    s = np.asarray(s, dtype=float)
    N = len(s)
    if N < 3:
        raise InvalidInputError("need at least 3 nodes")
    h = np.diff(s)
    h1, h2 = h[:-1], h[1:]
    i = np.arange(1, N - 1)
    lo = -h2 / (h1 * (h1 + h2))
    mid = (h2 - h1) / (h1 * h2)
    hi = h1 / (h2 * (h1 + h2))
    a, b = h[0], h[1]
    c, d = h[-1], h[-2]
    rows = np.concatenate([i, i, i, [0, 0, 0, N - 1, N - 1, N - 1]])
    cols = np.concatenate([i - 1, i, i + 1, [0, 1, 2, N - 1, N - 2, N - 3]])
    vals = np.concatenate([lo, mid, hi, [-(2 * a + b) / (a * (a + b)), (a + b) / (a * b),
                                         -a / (b * (a + b)), (2 * c + d) / (c * (c + d)),
                                         -(c + d) / (c * d), c / (d * (c + d))]])
    D = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    D2 = sp.csr_matrix((np.concatenate([2 / (h1 * (h1 + h2)), -2 / (h1 * h2), 2 / (h2 * (h1 + h2))]),
                        (np.concatenate([i, i, i]), np.concatenate([i - 1, i, i + 1]))),
                       shape=(N, N))
    return D, D2


# ---------------------------------------------------------------- state and linear step

@dataclass
class PerturbationState:
    t: float
    eta: np.ndarray
    xi: np.ndarray

    def check(self):
        if not (np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.xi))):
            raise NumericalBlowupError("non-finite perturbation state")
        if np.any(self.eta + 1 <= 0) or np.any(self.xi + 1 <= 0):
            raise DegenerateStateError("eta + 1 and xi + 1 must stay positive")
        return self


@dataclass
class LinearStepProblem:
    """Coefficients of one implicit step on a slice.

    eta_t = a_ee eta + c_ex xi + d_ex xi_s + f1
    xi_t  = a_xx xi + b xi_s + g xi_ss + c_xe eta + d_xe eta_s + f2
    """

    s: np.ndarray
    a_ee: np.ndarray
    c_ex: np.ndarray
    d_ex: np.ndarray
    f1: np.ndarray
    a_xx: np.ndarray
    b: np.ndarray
    g: np.ndarray
    c_xe: np.ndarray
    d_xe: np.ndarray
    f2: np.ndarray
    ops: Optional[tuple] = field(default=None, repr=False)


def assemble_coefficients(eta_m, xi_m, eta_m_s, xi_m_s, ratio, combo, inv_psi2, n, s):
    """Split the iteration into implicit multipliers and explicit forcing.

    Returns a dict whose keys match :class:`LinearStepProblem`.  The binomial
    remainder uses signed powers of xi^m, so that a fixed point of the
    iteration solves the nonlinear system exactly.
    """
    k = 2.0 * n * (n - 1)
    x1, e1 = xi_m + 1.0, eta_m + 1.0
    r2 = ratio * ratio
    S = higher_binomial_sum(xi_m, n)
    a_over_s = inv_psi2
    w = xi_m * (xi_m + 2.0)
    g = 1.0 / (e1 * x1 ** (2 * n))
    return dict(
        a_ee=k * (r2 - a_over_s * w / x1**2),
        c_ex=k * r2 * 2 * n / x1 ** (2 * n),
        d_ex=-2.0 * k * ratio / x1 ** (2 * n + 1),
        f1=k * (r2 * S / x1 ** (2 * n) - a_over_s * w / x1**2 - xi_m_s**2 / x1 ** (2 * n + 2)),
        a_xx=-2.0 * n * combo / x1 ** (2 * n - 1),
        b=n * ratio * g,
        g=g,
        c_xe=-combo / (e1 * x1 ** (2 * n - 1)),
        d_xe=-0.5 * ratio / (e1**2 * x1 ** (2 * n - 1)),
        f2=(-combo * S / x1 ** (2 * n - 1) + (n - 1) * a_over_s * w / x1
            - xi_m_s**2 / (e1 * x1 ** (2 * n + 1)) - 0.5 * eta_m_s * xi_m_s / (e1**2 * x1 ** (2 * n))),
    )


def assemble_linear_step(prev, coeffs, ti, g_min=1e-3, ops=None):
    """Linear problem on slice ``ti`` with the previous iterate ``prev`` frozen."""
    n = coeffs.n
    s = coeffs.s[ti]
    if ops is None:
        ops = fd_matrices(s)
    D = ops[0]
    c = coeffs.row(ti)
    fields = assemble_coefficients(prev.eta, prev.xi, D @ prev.eta, D @ prev.xi,
                                   c["ratio"], c["combo"], c["inv_psi2"], n, s)
    if np.min(fields["g"]) < g_min:
        raise StepRejectedError(f"diffusion coefficient {np.min(fields['g']):.3e} < {g_min:g}")
    return LinearStepProblem(s=s, ops=ops, **fields)


def _phi(a, dt):
    """``(exp(a dt) - 1) / a`` with its small-argument limit."""
    z = a * dt
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, dt * (1.0 + 0.5 * z), np.expm1(z) / safe)


def linear_step(problem, state, dt):
    """Advance ``state`` by ``dt``: backward Euler in xi, integrating factor in eta.

    The two substeps are solved as one coupled sparse system so that the
    updated xi and xi_s enter the eta step and the updated eta, eta_s enter the
    xi step.  xi vanishes at both end nodes.
    """
    p = problem
    N = len(p.s)
    D, D2 = p.ops if p.ops is not None else fd_matrices(p.s)
    E = np.exp(p.a_ee * dt)
    phi = _phi(p.a_ee, dt)
    I = sp.identity(N, format="csr")
    interior = np.ones(N)
    interior[[0, -1]] = 0.0
    Pin = sp.diags(interior)
    A_ee = I
    A_ex = -sp.diags(phi * p.c_ex) - sp.diags(phi * p.d_ex) @ D
    A_xx = (Pin @ (I / dt - sp.diags(p.a_xx) - sp.diags(p.b) @ D - sp.diags(p.g) @ D2)
            + sp.diags(1.0 - interior))
    A_xe = -Pin @ (sp.diags(p.c_xe) + sp.diags(p.d_xe) @ D)
    M = sp.bmat([[A_ee, A_ex], [A_xe, A_xx]], format="csc")
    perm = np.empty(2 * N, dtype=int)
    perm[0::2] = np.arange(N)
    perm[1::2] = np.arange(N, 2 * N)
    M = M[perm][:, perm]
    rhs_e = E * state.eta + phi * p.f1
    rhs_x = interior * (state.xi / dt + p.f2)
    rhs = np.empty(2 * N)
    rhs[0::2] = rhs_e
    rhs[1::2] = rhs_x
    try:
        sol = splu(M.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalBlowupError("linear step produced non-finite values")
    return PerturbationState(t=state.t + dt, eta=sol[0::2].copy(), xi=sol[1::2].copy())


def pde_rhs(state, coeffs, ti, ops=None):
    """Nonlinear right-hand sides on slice ``ti`` with second-order differences in s.

    The eta equation uses no derivative of eta.  xi_ss vanishes at the end nodes
    (Dirichlet data there).
    """
    state.check()
    s = coeffs.s[ti]
    D, D2 = fd_matrices(s) if ops is None else ops
    c = coeffs.row(ti)
    return pde_rhs_pointwise(state.eta, state.xi, D @ state.eta, D @ state.xi, D2 @ state.xi,
                             c["ratio"], c["combo"], c["inv_psi2"], coeffs.n)


# ---------------------------------------------------------------- Picard iteration

@dataclass
class PicardReport:
    iterations: int
    diff_energies: list
    kappa_estimates: list
    kappa_two_term: list
    converged: bool
    kappa_below_quarter: bool
    energy: Optional[EnergyReport] = None
    first_iterate_energy: float = float("nan")
    c_tilde: float = float("nan")
    bound_ok: Optional[bool] = None

    def to_dict(self):
        return {"iterations": self.iterations, "diff_energies": list(map(float, self.diff_energies)),
                "kappa_estimates": list(map(float, self.kappa_estimates)),
                "kappa_two_term": list(map(float, self.kappa_two_term)),
                "converged": self.converged, "kappa_below_quarter": self.kappa_below_quarter,
                "first_iterate_energy": self.first_iterate_energy, "c_tilde": self.c_tilde,
                "bound_ok": self.bound_ok,
                "energy": None if self.energy is None else self.energy.to_dict(False)}


def march(initial, coeffs, m_eta, m_xi, dt, g_min=1e-3, ops_cache=None, forcing=None):
    """Solve one linear iterate over the whole time grid.

    ``m_eta``, ``m_xi`` are the previous iterate as ``(nt, nx)`` arrays.
    ``forcing`` optionally adds ``(f1, f2)`` arrays of the same shape.
    """
    nt = coeffs.s.shape[0]
    eta = np.empty_like(m_eta)
    xi = np.empty_like(m_xi)
    eta[0], xi[0] = initial.eta, initial.xi
    state = PerturbationState(0.0, initial.eta.copy(), initial.xi.copy())
    for k in range(1, nt):
        ops = ops_cache[k] if ops_cache is not None else None
        prob = assemble_linear_step(PerturbationState(k * dt, m_eta[k], m_xi[k]), coeffs, k,
                                    g_min=g_min, ops=ops)
        if forcing is not None:
            prob.f1 = prob.f1 + forcing[0][k]
            prob.f2 = prob.f2 + forcing[1][k]
        state = linear_step(prob, state, dt)
        eta[k], xi[k] = state.eta, state.xi
    return eta, xi


def picard_solve(initial, coeffs, flow, cfg, max_iter=50, tol=1e-10, g_min=1e-3,
                 bound_factor=2.0):
    """Picard iteration from the zero iterate; returns ``((eta, xi), PicardReport)``.

    The stopping test is on the energy of successive differences.  The first
    iterate (the linear evolution of the initial data) calibrates
    ``C~ = E(eta^1, xi^1; T) / E_0``, against which the final energy is compared.
    """
    t = flow.t_grid
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise InvalidInputError("the solver needs a uniform time grid")
    initial.check()
    ell = weight_grid(flow, cfg)
    ops_cache = [None] + [fd_matrices(coeffs.s[k]) for k in range(1, len(t))]
    shape = flow.rho.shape
    eta_m = np.zeros(shape)
    xi_m = np.zeros(shape)
    diffs, kappas, kappas2 = [], [], []
    converged = False
    first_energy = float("nan")
    it = 0
    for it in range(1, max_iter + 1):
        try:
            eta_n, xi_n = march(initial, coeffs, eta_m, xi_m, dt, g_min=g_min, ops_cache=ops_cache)
            PerturbationState(0.0, eta_n, xi_n).check()
        except (NumericalBlowupError, DegenerateStateError) as exc:
            raise NumericalBlowupError(f"iterate {it}: {exc}", iterate=it) from exc
        d = energy_functional(eta_n - eta_m, xi_n - xi_m, cfg, flow, ell=ell).e_total
        if it == 1:
            first_energy = d
        diffs.append(d)
        if len(diffs) >= 2 and diffs[-2] > 0:
            kappas.append(float(np.sqrt(diffs[-1] / diffs[-2])))
        if len(diffs) >= 3 and diffs[-2] + diffs[-3] > 0:
            kappas2.append(float(np.sqrt(diffs[-1]) / (np.sqrt(diffs[-2]) + np.sqrt(diffs[-3]))))
        eta_m, xi_m = eta_n, xi_n
        if d < tol:
            converged = True
            break
    energy = energy_functional(eta_m, xi_m, cfg, flow, ell=ell)
    e0 = energy.e0
    c_tilde = first_energy / e0 if e0 > 0 else float("nan")
    bound_ok = bool(energy.e_total <= bound_factor * first_energy) if e0 > 0 else True
    rep = PicardReport(iterations=it, diff_energies=diffs, kappa_estimates=kappas,
                       kappa_two_term=kappas2, converged=converged,
                       kappa_below_quarter=bool(all(k < 0.25 for k in kappas)), energy=energy,
                       first_iterate_energy=first_energy, c_tilde=c_tilde, bound_ok=bound_ok)
    return (eta_m, xi_m), rep


def energy_monitor(series, cfg, flow, c_tilde=None, bound_factor=2.0):
    """Energy of a solved series and the flag ``E <= bound_factor * C~ * E_0``."""
    rep = energy_functional(series[0], series[1], cfg, flow)
    flags = {"e_total": rep.e_total, "e0": rep.e0, "ratio": rep.e_total / rep.e0 if rep.e0 > 0 else 0.0}
    if rep.e0 == 0:
        flags["bound_ok"] = rep.e_total == 0
    elif c_tilde is not None:
        flags["bound_ok"] = bool(rep.e_total <= bound_factor * c_tilde * rep.e0)
    return rep, flags


# ---------------------------------------------------------------- initial data

def smooth_bump(x, lo, hi):
    """``exp(1 - 1/(1 - r^2))`` on ``(lo, hi)``, scaled to peak 1 at the midpoint."""
    x = np.asarray(x, dtype=float)
    c, w = 0.5 * (lo + hi), 0.5 * (hi - lo)
    r = (x - c) / w
    out = np.zeros_like(x)
    m = np.abs(r) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r[m] ** 2))
    return out


def make_initial_data(shape, amplitude, support, flow, cfg=None, wavenumber=3):
    """Compactly supported initial data for both eta and xi, in terms of x (= s at t = 0).

    Returns ``(PerturbationState, E_0)``.
    """
    x = flow.x_grid
    lo, hi = support
    if not lo < hi:
        raise InvalidInputError("support must be an interval lo < hi")
    if lo <= x[0] or hi >= x[-1]:
        raise InvalidInputError(f"support {support} must lie strictly inside ({x[0]:g}, {x[-1]:g})")
    if shape == "zero":
        u = np.zeros_like(x)
    elif shape == "bump":
        u = amplitude * smooth_bump(x, lo, hi)
    elif shape == "sine-packet":
        u = amplitude * smooth_bump(x, lo, hi) * np.sin(2 * np.pi * wavenumber * (x - lo) / (hi - lo))
    else:
        raise InvalidInputError(f"unknown initial shape {shape!r}")
    state = PerturbationState(0.0, u.copy(), u.copy()).check()
    e0 = initial_energy(state.eta, state.xi, cfg, flow) if cfg is not None else float("nan")
    return state, e0


# ---------------------------------------------------------------- reconstruction

def reconstruct_and_residual(series, flow, x_window=(0.25, 5.0), t_min=None):
    """Perturbed metric (chi~, psi~) and its radial Ricci-flow residual.

    Residuals are relative (chi residual over chi~, psi residual over the size of
    its terms) on interior nodes inside ``x_window`` with ``t >= t_min``
    (default the third slice).  Returns ``(chi_tilde, psi_tilde, report)``.
    """
    eta, xi = series
    n = flow.n
    zeta = eta_inverse(eta, xi, n)
    chi_t = (zeta + 1.0) * flow.chi
    psi_t = (xi + 1.0) * flow.psi_t
    x, t = flow.x_grid, flow.t_grid
    s_tilde = np.concatenate([flow.s[:, :1], flow.s[:, :1] + np.cumsum(
        0.5 * np.diff(x)[None, :] * (chi_t[:, 1:] + chi_t[:, :-1]), axis=1)], axis=1)
    r_chi, r_psi = rf_residual_fields(chi_t, psi_t, x, t, n)
    psi_s = np.gradient(psi_t, x, axis=1, edge_order=2) / chi_t
    scale = np.abs(np.gradient(psi_t, t, axis=0, edge_order=2)) + (n - 1) * (1 + psi_s**2) / psi_t
    r_chi = r_chi / chi_t
    r_psi = r_psi / scale
    if t_min is None:
        t_min = t[min(2, len(t) - 1)]
    mask = ((x >= x_window[0]) & (x <= x_window[1]))[None, :] & (t >= t_min)[:, None]
    mask[:, [0, -1]] = False
    mask[[0, -1], :] = False
    per_slice = np.array([np.abs(np.where(mask[k], r_psi[k], 0)).max() for k in range(len(t))])
    rep = {"sup_chi": float(np.abs(r_chi[mask]).max()), "sup_psi": float(np.abs(r_psi[mask]).max()),
           "l2_chi": float(np.sqrt(np.mean(r_chi[mask] ** 2))),
           "l2_psi": float(np.sqrt(np.mean(r_psi[mask] ** 2))),
           "per_slice_psi": per_slice, "s_tilde": s_tilde}
    return chi_t, psi_t, rep


# ---------------------------------------------------------------- manufactured solutions

def _gaussian(s, c, w):
    g = np.exp(-(((s - c) / w) ** 2))
    return g, -2.0 * (s - c) / w**2 * g, (-2.0 / w**2 + 4.0 * (s - c) ** 2 / w**4) * g


def manufactured_fields(s, t, amplitude=1e-3, center=2.0, width=0.3, fast=False):
    """Manufactured ``(u, u_s, u_ss, u_t)`` as functions of (s, t).

    A Gaussian in s, negligible at the corner and the far end, times
    ``1 + t + t^2`` (or ``1 + sin(40 t)`` with ``fast``, which makes the time
    error dominate).
    """
    g, d, dd = _gaussian(s, center, width)
    if fast:
        tf, tft = 1.0 + np.sin(40.0 * t), 40.0 * np.cos(40.0 * t)
    else:
        tf, tft = 1.0 + t + t * t, 1.0 + 2.0 * t
    return amplitude * tf * g, amplitude * tf * d, amplitude * tf * dd, amplitude * tft * g


def manufactured_solution_error(flow, coeffs, fast=False, amplitude=1e-3, relative=False):
    """L2(ds) error at the final time of the linear step against a manufactured pair.

    With ``relative`` the error is divided by the L2 norm of the exact pair.

    The linear problem is the first Picard iterate (zero previous iterate).
    Time derivatives at fixed x pick up ``u_s * s_t`` with
    ``s_t = (lambda rho + omega(rho)) / sqrt(eps)``.
    """
    n, lam = flow.n, flow.lam
    t = flow.t_grid
    prof = flow.profile
    omega = prof.evaluate(flow.rho.ravel()).omega.reshape(flow.rho.shape)
    s_t = (lam * flow.rho + omega) / np.sqrt(flow.eps)[:, None]
    shape = flow.rho.shape
    f1, f2 = np.zeros(shape), np.zeros(shape)
    exact = []
    for k in range(len(t)):
        s = flow.s[k]
        c = coeffs.row(k)
        e, es, _, et = manufactured_fields(s, t[k], amplitude, fast=fast)
        x, xs, xss, xt = manufactured_fields(s, t[k], 2.0 * amplitude, center=2.5, fast=fast)
        z = np.zeros_like(s)
        cf = assemble_coefficients(z, z, z, z, c["ratio"], c["combo"], c["inv_psi2"], n, s)
        f1[k] = et + es * s_t[k] - (cf["a_ee"] * e + cf["c_ex"] * x + cf["d_ex"] * xs)
        f2[k] = (xt + xs * s_t[k]
                 - (cf["a_xx"] * x + cf["b"] * xs + cf["g"] * xss + cf["c_xe"] * e + cf["d_xe"] * es))
        exact.append((e, x))
    init = PerturbationState(0.0, exact[0][0], exact[0][1])
    z = np.zeros(shape)
    eta, xi = march(init, coeffs, z, z, float(t[1] - t[0]), forcing=(f1, f2))
    e_ex, x_ex = exact[-1]
    err = float(np.sqrt(np.trapezoid((eta[-1] - e_ex) ** 2 + (xi[-1] - x_ex) ** 2, flow.s[-1])))
    if relative:
        err /= float(np.sqrt(np.trapezoid(e_ex**2 + x_ex**2, flow.s[-1])))
    return err
