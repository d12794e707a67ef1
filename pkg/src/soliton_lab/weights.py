"""Background coefficients, the space-time weight and weighted energies.

Everything is tabulated on the fixed x nodes of a :class:`FlowField`; derivatives
in s use the node positions ``s(x, t)`` directly.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, InvalidInputError


@dataclass
class BackgroundCoefficients:
    """Coefficient tables ``(nt, nx)`` of the soliton background in the s coordinate."""

    c_inv_psi2: np.ndarray
    c_ratio: np.ndarray
    c_ratio2: np.ndarray
    c_combo: np.ndarray
    a_field: np.ndarray
    a_sup: np.ndarray
    int_a2: np.ndarray
    s: np.ndarray
    ds_dx: np.ndarray
    n: int

    def row(self, ti):
        """Coefficients on time slice ``ti`` as a dict of 1-D arrays."""
        return {"inv_psi2": self.c_inv_psi2[ti], "ratio": self.c_ratio[ti],
                "ratio2": self.c_ratio2[ti], "combo": self.c_combo[ti],
                "a": self.a_field[ti], "s": self.s[ti]}


def coefficients_at(profile, rho, eps):
    """Chain-rule scalings of the profile ratios to the evolving metric at ``rho_t(x)``.

    Returns ``(1/psi^2, psi_s/psi, psi_ss/psi + (n-1) psi_s^2/psi^2)`` where the
    evolving ``psi(x, t) = sqrt(eps) psi(rho)`` and ``ds = sqrt(eps) drho``.
    """
    n = profile.n
    p, q, inv, _, _ = profile.ratios(np.asarray(rho))
    return inv / eps, p / np.sqrt(eps), (q + (n - 1) * p * p) / eps


def background_coefficients(flow, profile=None):
    profile = flow.profile if profile is None else profile
    if profile.params != flow.profile.params:
        raise InvalidInputError("flow and profile have different parameters")
    eps = flow.eps[:, None]
    shape = flow.rho.shape
    inv, ratio, combo = coefficients_at(profile, flow.rho.ravel(),
                                        np.broadcast_to(eps, shape).ravel())
    inv, ratio, combo = (a.reshape(shape) for a in (inv, ratio, combo))
    a_field = flow.s * inv
    a_sup = a_field.max(axis=1)
    t = flow.t_grid
    int_a2 = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (a_sup[1:] ** 2 + a_sup[:-1] ** 2))])
    return BackgroundCoefficients(c_inv_psi2=inv, c_ratio=ratio, c_ratio2=ratio * ratio,
                                  c_combo=combo, a_field=a_field, a_sup=a_sup, int_a2=int_a2,
                                  s=flow.s, ds_dx=flow.chi, n=profile.n)


@dataclass(frozen=True)
class WeightConfig:
    alpha: int = 3
    sigma: float = 10.0
    x0: float = 1.0
    case: str = "HC"

    def __post_init__(self):
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise InvalidInputError("alpha must be an integer >= 1")
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")
        if not self.x0 > 0:
            raise InvalidInputError("x0 must be positive")
        if self.case not in ("HC", "G"):
            raise InvalidInputError(f"unknown case {self.case!r}")


def _x0_value(flow, cfg, t):
    """Limit of ``l^2`` at ``x0`` from the left, per time."""
    s0 = np.array([np.interp(cfg.x0, flow.x_grid, row) for row in np.atleast_2d(flow.s)])
    return s0**2 + cfg.sigma * t


def _ell2_rows(x, s_rows, t, cfg, l0):
    """``l^2`` on rows of nodes: ``s^2 + sigma t`` below x0, a cubic blend in x to 1."""
    ell2 = s_rows**2 + cfg.sigma * t[:, None]
    if cfg.case == "HC":
        tau = np.clip(x - cfg.x0, 0.0, 1.0)
        h = tau * tau * (3.0 - 2.0 * tau)
        blend = l0[:, None] + (1.0 - l0[:, None]) * h[None, :]
        ell2 = np.where((x >= cfg.x0)[None, :], blend, ell2)
    return ell2


def weight_grid(flow, cfg):
    """The weight ``l`` on every node of the flow, shape ``(nt, nx)``."""
    t = flow.t_grid
    l0 = _x0_value(flow, cfg, t)
    return np.sqrt(_ell2_rows(flow.x_grid, flow.s, t, cfg, l0))


def weight_ell(s, t, cfg, flow):
    """The weight at arc length ``s`` and time ``t`` (rows interpolated in t)."""
    tg = flow.t_grid
    if t < tg[0] or t > tg[-1]:
        raise InvalidInputError("t outside the flow's time range")
    k = int(np.clip(np.searchsorted(tg, t) - 1, 0, len(tg) - 2)) if len(tg) > 1 else 0
    if len(tg) > 1:
        w = (t - tg[k]) / (tg[k + 1] - tg[k])
        srow = (1 - w) * flow.s[k] + w * flow.s[k + 1]
    else:
        srow = flow.s[0]
    x = float(np.interp(s, srow, flow.x_grid))
    s0 = float(np.interp(cfg.x0, flow.x_grid, srow))
    if cfg.case == "G" or x < cfg.x0:
        return float(np.sqrt(s * s + cfg.sigma * t))
    l0 = s0 * s0 + cfg.sigma * t
    tau = min(x - cfg.x0, 1.0)
    return float(np.sqrt(l0 + (1.0 - l0) * tau * tau * (3.0 - 2.0 * tau)))


def _domain_mask(flow, cfg):
    if cfg.case == "G":
        return flow.x_grid <= cfg.x0
    return np.ones(len(flow.x_grid), dtype=bool)


def _slice_norms_sq(u, s, ell, ks_alphas):
    """Squared weighted norms of one slice for each ``(k, alpha)`` pair."""
    d = [u]
    kmax = max(k for k, _ in ks_alphas)
    if kmax >= 1:
        d.append(np.gradient(u, s, edge_order=2))
    if kmax >= 2:
        d.append(np.gradient(d[1], s, edge_order=2))
    out = []
    for k, alpha in ks_alphas:
        f = sum(d[j] ** 2 / ell ** (2 * alpha - 2 * j) for j in range(k + 1))
        out.append(float(np.trapezoid(f, s)))
    return out


def _time_index(flow, t):
    idx = int(np.argmin(np.abs(flow.t_grid - t)))
    if not np.isclose(flow.t_grid[idx], t, rtol=1e-12, atol=1e-14):
        raise InvalidInputError(f"t = {t} is not on the flow's time grid")
    return idx


def weighted_norm(u, k, alpha, t, cfg, flow, squared=False):
    """``||u||_{H^k_alpha}`` on the slice at time ``t`` (trapezoid in s)."""
    u = np.asarray(u, dtype=float)
    if k not in (0, 1, 2):
        raise InvalidInputError("k must be 0, 1 or 2")
    m = _domain_mask(flow, cfg)
    if m.sum() < 3 and k == 2 or m.sum() < 2:
        raise InsufficientDataError("too few nodes for the requested derivative order")
    ti = _time_index(flow, t)
    ell = weight_grid(flow, cfg)[ti]
    val = _slice_norms_sq(u[m], flow.s[ti, m], ell[m], [(k, alpha)])[0]
    return val if squared else float(np.sqrt(val))


@dataclass
class EnergyReport:
    linf_h1_eta: float
    l2_h1p1_eta: float
    linf_h1_xi: float
    l2_h2p1_xi: float
    e0: float
    per_slice: dict = field(default_factory=dict, repr=False)

    @property
    def e_total(self):
        return self.linf_h1_eta + self.l2_h1p1_eta + self.linf_h1_xi + self.l2_h2p1_xi

    def to_dict(self, include_slices=True):
        d = {"linf_h1_eta": self.linf_h1_eta, "l2_h1p1_eta": self.l2_h1p1_eta,
             "linf_h1_xi": self.linf_h1_xi, "l2_h2p1_xi": self.l2_h2p1_xi,
             "e_total": self.e_total, "e0": self.e0}
        if include_slices:
            d["per_slice"] = {k: np.asarray(v).tolist() for k, v in self.per_slice.items()}
        return d


def energy_functional(eta_series, xi_series, cfg, flow, ell=None):
    """Weighted energy of a pair of space-time series aligned with ``flow.t_grid``.

    Squared norms throughout: sup over slices for the L-infinity parts, trapezoid
    in t for the L2 parts.  ``e0`` uses the first slice.
    """
    eta = np.asarray(eta_series, dtype=float)
    xi = np.asarray(xi_series, dtype=float)
    shape = flow.rho.shape
    if eta.shape != shape or xi.shape != shape:
        raise InvalidInputError(f"series shape must be {shape}, got {eta.shape} and {xi.shape}")
    m = _domain_mask(flow, cfg)
    if m.sum() < 3:
        raise InsufficientDataError("need at least 3 nodes")
    ell = weight_grid(flow, cfg) if ell is None else ell
    a = cfg.alpha
    rows = []
    for ti in range(shape[0]):
        s, w = flow.s[ti, m], ell[ti, m]
        ne = _slice_norms_sq(eta[ti, m], s, w, [(1, a), (1, a + 1)])
        nx = _slice_norms_sq(xi[ti, m], s, w, [(1, a), (2, a + 1)])
        rows.append(ne + nx)
    rows = np.array(rows)
    t = flow.t_grid

    def l2(col):
        return float(np.trapezoid(rows[:, col], t)) if len(t) > 1 else 0.0
    per_slice = {"t": t.copy(), "h1a_eta": rows[:, 0], "h1a1_eta": rows[:, 1],
                 "h1a_xi": rows[:, 2], "h2a1_xi": rows[:, 3]}
    return EnergyReport(linf_h1_eta=float(rows[:, 0].max()), l2_h1p1_eta=l2(1),
                        linf_h1_xi=float(rows[:, 2].max()), l2_h2p1_xi=l2(3),
                        e0=float(rows[0, 0] + rows[0, 2]), per_slice=per_slice)


def initial_energy(eta0, xi0, cfg, flow):
    """``||eta0||^2_{H^1_alpha} + ||xi0||^2_{H^1_alpha}`` at t = 0."""
    return (weighted_norm(eta0, 1, cfg.alpha, 0.0, cfg, flow, squared=True)
            + weighted_norm(xi0, 1, cfg.alpha, 0.0, cfg, flow, squared=True))


def _cumulative_inv_s(t, s_rows):
    """Columns of ``int_0^t ds_tau / s`` and ``/ s^2``, exact when s^2 is linear in t."""
    dt = np.diff(t)[:, None]
    s0, s1 = s_rows[:-1], s_rows[1:]
    inv1 = 2.0 * dt / (s0 + s1)
    u0, u1 = s0**2, s1**2
    du = u1 - u0
    small = np.abs(du) <= 1e-12 * np.maximum(u0, u1)
    ratio = np.where(small, 1.0, du)
    inv2 = np.where(small, dt / np.sqrt(u0 * u1), dt * np.log(u1 / u0) / ratio)
    z = np.zeros((1, s_rows.shape[1]))
    return (np.concatenate([z, np.cumsum(inv1, axis=0)]),
            np.concatenate([z, np.cumsum(inv2, axis=0)]))


@dataclass
class ComparisonReport:
    ratio_min: float
    ratio_max: float
    ratio_upper_bound: float
    int_a2: np.ndarray
    int_inv_s: np.ndarray
    int_inv_s_bound: np.ndarray
    int_inv_s_ok: Optional[bool]
    int_a2_monotone: bool
    int_inv_s2_at_T: np.ndarray
    int_inv_s2_log_slope: float

    def to_dict(self):
        return {"ratio_min": self.ratio_min, "ratio_max": self.ratio_max,
                "ratio_upper_bound": self.ratio_upper_bound,
                "int_a2_T": float(self.int_a2[-1]), "int_a2_monotone": self.int_a2_monotone,
                "int_inv_s_T_max": float(self.int_inv_s[-1].max()),
                "int_inv_s_bound_T": float(self.int_inv_s_bound[-1]),
                "int_inv_s_ok": self.int_inv_s_ok,
                "int_inv_s2_log_slope": self.int_inv_s2_log_slope}


def comparison_and_A_check(coeffs, cfg, flow, slack=1e-9):
    """Check ``c <= l^2/s^2 <= 1 + 2 sigma/(sqrt(n) - 1)`` on (0, x0) and tabulate
    the time integrals of ``A^2``, ``1/s`` and ``1/s^2``.

    The ``1/s`` integral is compared against ``2 sqrt(t/(sqrt(n) - 1))``, which
    follows from ``s^2 >= (sqrt(n) - 1) t`` when lambda = 0.  The log-slope of the
    ``1/s^2`` integral at time T against ``log x`` near 0 measures its divergence.
    """
    n = coeffs.n
    inside = flow.x_grid < cfg.x0
    if not inside.any():
        raise InsufficientDataError("no nodes below x0")
    t = flow.t_grid
    s = flow.s[:, inside]
    ratio = 1.0 + cfg.sigma * t[:, None] / s**2
    upper = 1.0 + 2.0 * cfg.sigma / (np.sqrt(n) - 1.0)
    rmax, rmin = float(ratio.max()), float(ratio.min())
    if rmax > upper * (1 + slack):
        raise ConfigurationError(f"l^2/s^2 reaches {rmax:.4g} > {upper:.4g}; check x0/sigma")
    int1, int2 = _cumulative_inv_s(t, flow.s)
    bound = 2.0 * np.sqrt(t / (np.sqrt(n) - 1.0))
    ok = None
    if flow.lam == 0:
        ok = bool(np.all(int1[:, inside] <= bound[:, None] * (1 + 1e-6) + slack))
    xs = flow.x_grid[inside][:5]
    col = int2[-1, inside][:5]
    slope = float(np.polyfit(np.log(xs), col, 1)[0]) if len(xs) >= 2 else float("nan")
    return ComparisonReport(ratio_min=rmin, ratio_max=rmax, ratio_upper_bound=upper,
                            int_a2=coeffs.int_a2, int_inv_s=int1, int_inv_s_bound=bound,
                            int_inv_s_ok=ok,
                            int_a2_monotone=bool(np.all(np.diff(coeffs.int_a2) >= 0)),
                            int_inv_s2_at_T=int2[-1], int_inv_s2_log_slope=slope)
