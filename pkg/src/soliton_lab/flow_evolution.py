"""Ricci flow of a soliton through its radial diffeomorphisms.

The soliton evolves as ``g(t) = eps(t) rho_t^* g`` with ``eps = 1 + 2 lambda t`` and
``d rho_t / dt = omega(rho_t) / eps``.  In the arc-length coordinate
``s = sqrt(eps) rho_t(x)`` the metric reads ``chi^2 dx^2 + psi(x, t)^2 g_{S^n}``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    BoundViolationError,
    DataInconsistencyError,
    DomainExitError,
    InsufficientDataError,
    InvalidInputError,
    NoCriticalPointError,
    OutOfTimeDomainError,
)
from .soliton_ode import SolitonProfile, find_x_crit


def epsilon(t, lam, check=True):
    """Scale factor ``1 + 2 lambda t``; raises if it drops to 1/2 when ``check``."""
    eps = 1.0 + 2.0 * lam * np.asarray(t, dtype=float)
    if check and np.any(eps <= 0.5):
        raise OutOfTimeDomainError(f"epsilon(t) = {np.min(eps):g} <= 1/2")
    return eps if np.ndim(eps) else float(eps)


def time_integral_inv_eps(t, lam):
    """``int_0^t dtau / eps(tau)``, equal to t when lambda = 0."""
    t = np.asarray(t, dtype=float)
    if lam == 0:
        return t
    return np.log1p(2.0 * lam * t) / (2.0 * lam)


@dataclass
class FlowField:
    """Space-time tables of the evolving soliton, stored time-major ``(nt, nx)``."""

    profile: SolitonProfile
    x_grid: np.ndarray
    t_grid: np.ndarray
    rho: np.ndarray
    s: np.ndarray
    chi: np.ndarray
    psi_t: np.ndarray
    m_of_t: np.ndarray
    s_min: np.ndarray
    s_0: np.ndarray
    x0: float
    x_crit: Optional[float] = None
    eps: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.profile.n

    @property
    def lam(self):
        return self.profile.lam

    def rows(self):
        """Long-format columns ``(t, x, rho, s, chi, psi_t)``."""
        nt, nx = self.rho.shape
        t = np.repeat(self.t_grid, nx)
        x = np.tile(self.x_grid, nt)
        return {"t": t, "x": x, "rho": self.rho.ravel(), "s": self.s.ravel(),
                "chi": self.chi.ravel(), "psi_t": self.psi_t.ravel()}


def _x_omega(profile, rho):
    return profile.x_omega(rho)


def evolve_flow(profile, x_grid, t_grid, tol=1e-10, x0=None):
    """Integrate ``d(rho^2)/dt = 2 rho omega(rho) / eps`` for every grid point at once.

    The squared radius keeps the right-hand side bounded at the singular corner,
    where ``2 rho omega(rho) -> 2 (sqrt(n) - 1)``.  ``x0`` is the crossover point of
    the weight (default 1 for half-complete profiles, half the tabulated radius
    otherwise).
    """
    x_grid = np.asarray(x_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if x_grid.ndim != 1 or len(x_grid) < 2 or np.any(np.diff(x_grid) <= 0) or x_grid[0] <= 0:
        raise InvalidInputError("x_grid must be positive and strictly increasing")
    if t_grid.ndim != 1 or t_grid[0] != 0 or np.any(np.diff(t_grid) <= 0):
        raise InvalidInputError("t_grid must start at 0 and increase strictly")
    if x_grid[-1] > profile.x_max:
        raise DomainExitError("x_grid extends beyond the profile")
    lam = profile.lam
    eps = epsilon(t_grid, lam)
    if x0 is None:
        x0 = 1.0 if profile.params.case == "HC" else 0.5 * profile.x_max
    x2max = profile.x_max**2

    def rhs(t, u):
        rho = np.sqrt(np.maximum(u, 0.0))
        return 2.0 * _x_omega(profile, rho) / (1.0 + 2.0 * lam * t)

    events = None
    if np.isfinite(x2max):
        def exit_event(_, u):
            return x2max - np.max(u)
        exit_event.terminal = True
        events = [exit_event]

    u0 = x_grid**2
    if len(t_grid) == 1:
        u = u0[None, :]
    else:
        # RK error norms are RMS over components; tighten so each x meets tol
        rtol = max(tol / np.sqrt(len(x_grid)), 100 * np.finfo(float).eps)
        sol = solve_ivp(rhs, (0.0, t_grid[-1]), u0, method="DOP853", t_eval=t_grid,
                        rtol=rtol, atol=rtol * 1e-3, events=events)
        if sol.status == 1:
            te = float(sol.t_events[0][0])
            raise DomainExitError(f"rho_t left the profile domain at t = {te:.6g}", t_exit=te)
        if not sol.success:
            raise InvalidInputError(f"flow integration failed: {sol.message}")
        u = sol.y.T
    rho = np.sqrt(u)
    if np.any(np.diff(rho, axis=1) <= 0):
        raise DataInconsistencyError("rho_t is not increasing in x")
    se = np.sqrt(eps)[:, None]
    s = se * rho
    chi = se * np.gradient(rho, x_grid, axis=1, edge_order=2)
    psi_t = se * profile.evaluate(rho.ravel()).psi.reshape(rho.shape)
    m_of_t = rho[:, 0]
    s_min = np.sqrt(eps) * _extrapolate_to_zero(x_grid, rho)
    s_0 = np.array([np.interp(x0, x_grid, row) for row in s])
    x_crit = None
    if profile.params.case == "HC" and profile.lam == 0:
        try:
            x_crit = find_x_crit(profile)
        except NoCriticalPointError:
            x_crit = None
    return FlowField(profile=profile, x_grid=x_grid, t_grid=t_grid, rho=rho, s=s, chi=chi,
                     psi_t=psi_t, m_of_t=m_of_t, s_min=s_min, s_0=s_0, x0=float(x0),
                     x_crit=x_crit, eps=np.asarray(eps))


def _extrapolate_to_zero(x_grid, rho):
    """rho_t(0+) from the two smallest nodes, linear in x^2 (rho^2 is smooth in x^2)."""
    x1, x2 = x_grid[0] ** 2, x_grid[1] ** 2
    u1, u2 = rho[:, 0] ** 2, rho[:, 1] ** 2
    u0 = u1 - x1 * (u2 - u1) / (x2 - x1)
    return np.sqrt(np.maximum(u0, 0.0))


def arc_length_and_metric(flow, xi, ti):
    """``(s, chi, psi)`` at grid node ``(x_grid[xi], t_grid[ti])``."""
    nt, nx = flow.rho.shape
    if not (-nx <= xi < nx and -nt <= ti < nt):
        raise IndexError("grid index out of range")
    return float(flow.s[ti, xi]), float(flow.chi[ti, xi]), float(flow.psi_t[ti, xi])


@dataclass
class BoundsReport:
    lower_margin: float
    upper_margin: float
    sgeq_margin: float
    outside_lower_margin: float
    outside_upper_margin: float
    x_max: float
    t_max: float

    def to_dict(self):
        return dict(self.__dict__)


def push_bounds(x, t, n, lam):
    """Lower and upper bounds for ``rho_t(x)^2`` near the singular corner."""
    c = np.sqrt(n) - 1.0
    tau = time_integral_inv_eps(t, lam)
    x2 = np.asarray(x) ** 2
    return x2 + c * tau, x2 + 4.0 * c * tau


def flow_bounds_check(flow, x_max=None, t_max=None, slack=1e-6):
    """Check the two-sided bounds on rho_t^2 over the small-x, small-t subdomain.

    Defaults are ``x <= 0.1 x0`` and ``t <= 0.1 T``.  Margins outside the
    subdomain are reported without raising.
    """
    if x_max is None:
        x_max = 0.1 * flow.x0
    if t_max is None:
        t_max = 0.1 * flow.t_grid[-1]
    X, T = np.meshgrid(flow.x_grid, flow.t_grid)
    lo, hi = push_bounds(X, T, flow.n, flow.lam)
    r2 = flow.rho**2
    inside = (X <= x_max) & (T <= t_max)
    if not inside.any():
        raise InsufficientDataError("bound-check subdomain contains no grid points")
    low_m = r2 - lo
    up_m = hi - r2
    lower_margin = float(low_m[inside].min())
    upper_margin = float(up_m[inside].min())
    tin = flow.t_grid <= t_max
    tau = time_integral_inv_eps(flow.t_grid[tin], flow.lam)
    sgeq = flow.s[tin, 0] ** 2 - (np.sqrt(flow.n) - 1.0) * tau * flow.eps[tin]
    sgeq_margin = float(sgeq.min())
    out = ~inside
    rep = BoundsReport(
        lower_margin=lower_margin, upper_margin=upper_margin, sgeq_margin=sgeq_margin,
        outside_lower_margin=float(low_m[out].min()) if out.any() else float("nan"),
        outside_upper_margin=float(up_m[out].min()) if out.any() else float("nan"),
        x_max=float(x_max), t_max=float(t_max))
    if lower_margin < -slack or upper_margin < -slack:
        raise BoundViolationError(
            f"rho^2 bounds violated: lower margin {lower_margin:.3e}, upper {upper_margin:.3e}")
    if sgeq_margin < -slack:
        raise BoundViolationError(f"inf s^2 bound violated by {-sgeq_margin:.3e}")
    return rep


@dataclass
class MReport:
    m: np.ndarray
    m_extrapolated: np.ndarray
    monotone: bool
    x_crit: Optional[float]
    x_crit_gap: Optional[float]

    def to_dict(self):
        return {"t_final_m": float(self.m[-1]), "monotone": self.monotone,
                "x_crit": self.x_crit, "x_crit_gap": self.x_crit_gap}


def find_m_of_t(flow, tol=1e-12):
    """``m(t) = inf_x rho_t`` via its grid proxy at the smallest node."""
    m = flow.m_of_t
    if np.any(m[1:] <= 0):
        raise DataInconsistencyError("m(t) must be positive for t > 0")
    dm = np.diff(m)
    monotone = bool(np.all(dm >= -tol * np.maximum(1.0, np.abs(m[1:]))))
    if not monotone:
        raise DataInconsistencyError(f"m(t) decreases by {-dm.min():.3e}")
    gap = None if flow.x_crit is None else float(abs(m[-1] - flow.x_crit))
    return MReport(m=m.copy(), m_extrapolated=_extrapolate_to_zero(flow.x_grid, flow.rho),
                   monotone=monotone, x_crit=flow.x_crit, x_crit_gap=gap)


@dataclass
class FlowResidual:
    res_chi: float
    res_psi: float
    res_ds: float
    mask_points: int

    def to_dict(self):
        return dict(self.__dict__)


def rf_residual_fields(chi, psi, x_grid, t_grid, n):
    """Pointwise residuals of the radial Ricci flow for ``chi dx, psi`` tables.

    Returns ``(r_chi, r_psi)`` where ``r_chi = chi_t - n (psi_ss / psi) chi`` and
    ``r_psi = psi_t - psi_ss + (n - 1)(1 - psi_s^2) / psi``, with s-derivatives
    taken through ``d/ds = chi^{-1} d/dx`` and second-order differences.
    """
    psi_x = np.gradient(psi, x_grid, axis=1, edge_order=2)
    psi_s = psi_x / chi
    psi_ss = np.gradient(psi_s, x_grid, axis=1, edge_order=2) / chi
    chi_t = np.gradient(chi, t_grid, axis=0, edge_order=2)
    psi_dt = np.gradient(psi, t_grid, axis=0, edge_order=2)
    r_chi = chi_t - n * psi_ss / psi * chi
    r_psi = psi_dt - psi_ss + (n - 1) * (1.0 - psi_s**2) / psi
    return r_chi, r_psi


def flow_pde_residual(flow, x_window=None, t_min=None, relative=True):
    """Sup of the Ricci-flow residuals of the evolving background on interior nodes.

    ``x_window`` and ``t_min`` mask the singular corner (defaults: x in
    [10 x_grid[0], 0.9 x_grid[-1]], t >= t_grid[2]).  With ``relative`` the
    chi residual is divided by chi and the psi residual by the size of its terms.
    The third entry compares ``d_t(ds)/ds = chi_t/chi`` with
    ``n (psi''/psi)(rho_t) / eps``.
    """
    nt, nx = flow.rho.shape
    if nt < 3 or nx < 3:
        raise InsufficientDataError("need at least 3 time slices and 3 nodes")
    x, t, n = flow.x_grid, flow.t_grid, flow.n
    r_chi, r_psi = rf_residual_fields(flow.chi, flow.psi_t, x, t, n)
    chi_t = np.gradient(flow.chi, t, axis=0, edge_order=2)
    q = flow.profile.evaluate(flow.rho.ravel())
    q = (q.psi2 / q.psi).reshape(flow.rho.shape)
    r_ds = chi_t / flow.chi - n * q / flow.eps[:, None]
    if x_window is None:
        x_window = (10.0 * x[0], 0.9 * x[-1])
    if t_min is None:
        t_min = t[min(2, nt - 1)]
    mask = ((x >= x_window[0]) & (x <= x_window[1]))[None, :] & (t >= t_min)[:, None]
    mask[:, [0, -1]] = False
    mask[[0, -1], :] = False
    if not mask.any():
        raise InsufficientDataError("residual mask is empty")
    if relative:
        psi = flow.psi_t
        psi_s = np.gradient(psi, x, axis=1, edge_order=2) / flow.chi
        scale = np.abs(np.gradient(psi, t, axis=0, edge_order=2)) + (n - 1) * (1 + psi_s**2) / psi
        r_chi = r_chi / flow.chi
        r_psi = r_psi / scale
        r_ds = r_ds / (np.abs(n * q / flow.eps[:, None]) + 1e-300)
    return FlowResidual(res_chi=float(np.abs(r_chi[mask]).max()),
                        res_psi=float(np.abs(r_psi[mask]).max()),
                        res_ds=float(np.abs(r_ds[mask]).max()),
                        mask_points=int(mask.sum()))
