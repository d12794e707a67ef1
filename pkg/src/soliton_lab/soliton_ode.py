"""Singular spherically symmetric gradient solitons from their phase-space ODE.

The metric ``dx^2 + psi(x)^2 g_{S^n}`` with potential gradient ``omega = phi'``
is encoded by the phase variables

    W = 1 / (n psi'/psi - omega),  X = sqrt(n) W psi'/psi,  Y = sqrt(n(n-1)) W / psi

as functions of ``y`` with ``dy = dx / W``.  Singular solitons are the
trajectories leaving the source equilibrium ``(W, X, Y) = (0, 1, 0)``.
"""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import bisect

from .errors import (
    DataInconsistencyError,
    DegenerateTrajectoryError,
    DomainExitError,
    InsufficientDataError,
    InvalidInputError,
    InvalidTrajectoryError,
    NoCriticalPointError,
    TrajectoryEscapeError,
)

BLOWUP_CAP = 1e6
# 1 - L is O(eps^4) on the default start curve; smaller eps loses the orbit to round-off
DEFAULT_EPS = 1e-2


class TrajectoryState(NamedTuple):
    w: float
    x: float
    y: float


@dataclass(frozen=True)
class SolitonParams:
    """Soliton constant and the initial point of the phase-space trajectory.

    ``x0v`` is the initial value of the phase variable X (not a radius).
    """

    n: int
    lam: float = 0.0
    w0: float = DEFAULT_EPS
    x0v: float = 0.5 * (1.0 + np.sqrt(1.0 - 2.0 * DEFAULT_EPS**2))
    y0: float = DEFAULT_EPS
    eps_init: float = DEFAULT_EPS
    case: str = "HC"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidInputError(f"n must be an integer >= 2, got {self.n}")
        vals = (self.lam, self.w0, self.x0v, self.y0, self.eps_init)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("soliton parameters must be finite")
        if self.w0 < 0 or self.y0 < 0:
            raise InvalidInputError("W(0) and Y(0) must be non-negative")
        if self.case not in ("HC", "G"):
            raise InvalidInputError(f"unknown case {self.case!r}")
        if self.case == "HC" and self.lam != 0:
            raise InvalidInputError("half-complete solitons are steady (lambda = 0)")

    @classmethod
    def near_source(cls, n, lam=0.0, eps=DEFAULT_EPS, w0=None, case=None):
        """Initial point ``(w0, source_x0(eps), eps)`` at distance ~eps from (0, 1, 0)."""
        if case is None:
            case = "HC" if lam == 0 else "G"
        return cls(n=n, lam=lam, w0=eps if w0 is None else w0, x0v=source_x0(eps),
                   y0=eps, eps_init=eps, case=case)

    @property
    def state0(self):
        return TrajectoryState(self.w0, self.x0v, self.y0)


def source_x0(y0):
    """X on the curve ``Y^2 = 2 X (1 - X)`` through the source, for given Y.

    The curve is tangent to the slow unstable direction, matches the invariant
    curve ``X - 1 = -Y^2/2 + O(Y^4)`` of every n, lies inside the unit disk and
    is exactly the orbit of the closed-form n = 4 soliton.  Trajectories started
    far off it (``|X - 1| >> Y^2``) linger near the origin of the (X, Y) plane and
    reach their paraboloidal far field only at very large x.
    """
    if not 0 <= y0 <= 1 / np.sqrt(2):
        raise InvalidInputError("y0 must lie in [0, 1/sqrt(2)]")
    return 0.5 * (1.0 + np.sqrt(1.0 - 2.0 * y0 * y0))


def _check_finite(*vals):
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise InvalidInputError("non-finite input")


def ode_rhs(state, n, lam):
    """Right-hand side (W', X', Y') of the first-order soliton system."""
    w, x, y = state
    _check_finite(w, x, y, lam)
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rn = np.sqrt(n)
    w2 = w * w
    x2 = x * x
    return TrajectoryState(
        w * (x2 - lam * w2),
        x2 * x - x + y * y / rn + lam * (rn - x) * w2,
        y * (x2 - x / rn - lam * w2),
    )


def steady_rhs(x, y, n):
    """The reduced planar field (X', Y') of the steady case."""
    _check_finite(x, y)
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rn = np.sqrt(n)
    return (x**3 - x + y * y / rn, y * (x * x - x / rn))


def jacobian(state, n, lam):
    """Analytic Jacobian of :func:`ode_rhs`."""
    w, x, y = state
    rn = np.sqrt(n)
    return np.array([
        [x * x - 3 * lam * w * w, 2 * w * x, 0.0],
        [2 * lam * (rn - x) * w, 3 * x * x - 1 - lam * w * w, 2 * y / rn],
        [-2 * lam * w * y, y * (2 * x - 1 / rn), x * x - x / rn - lam * w * w],
    ])


def numerical_jacobian(state, n, lam, h=1e-6):
    """Central-difference Jacobian of :func:`ode_rhs`."""
    s = np.asarray(state, dtype=float)
    jac = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        jac[:, j] = (np.array(ode_rhs(s + e, n, lam)) - np.array(ode_rhs(s - e, n, lam))) / (2 * h)
    return jac


def equilibria_and_linearization(n, lam):
    """Equilibria of the soliton system.

    Returns a list of ``(TrajectoryState, eigenvalues)`` pairs; the eigenvalue
    triple is given for the source ``(0, 1, 0)`` (ordered along W, X - 1, Y)
    and is ``None`` otherwise.
    """
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    rn = np.sqrt(n)
    eqs = [
        (TrajectoryState(0.0, 0.0, 0.0), None),
        (TrajectoryState(0.0, 1.0, 0.0), (1.0, 2.0, 1.0 - 1.0 / rn)),
        (TrajectoryState(0.0, -1.0, 0.0), None),
        (TrajectoryState(0.0, 1.0 / rn, np.sqrt(1.0 - 1.0 / n)), None),
        (TrajectoryState(0.0, 1.0 / rn, -np.sqrt(1.0 - 1.0 / n)), None),
    ]
    if lam > 0:
        wc = 1.0 / np.sqrt(lam * n)
        eqs.append((TrajectoryState(wc, 1.0 / rn, 0.0), None))
        eqs.append((TrajectoryState(-wc, 1.0 / rn, 0.0), None))
    return eqs


@dataclass
class Trajectory:
    """Samples of a phase-space trajectory on a uniform grid in y.

    ``xs`` holds the radial coordinate x(y) obtained by quadrature of W,
    normalised so that x -> 0 as y -> -inf.
    """

    ys: np.ndarray
    states: np.ndarray
    params: SolitonParams
    xs: np.ndarray
    c1_fit: float = float("nan")
    exit_reason: str = "range"

    @property
    def w(self):
        return self.states[:, 0]

    @property
    def x(self):
        return self.states[:, 1]

    @property
    def y(self):
        return self.states[:, 2]


def _events(params, cap, box):
    def blowup(_, s):
        return cap - np.max(np.abs(s[:3]))
    blowup.terminal = True

    # Y = 0 is invariant, so a start on it cannot change sign
    def ysign(_, s):
        return s[2] if params.y0 > 0 else 1.0
    ysign.terminal = True

    events = [blowup, ysign]
    if box is not None:
        def leave_box(_, s):
            return box - max(abs(s[0]), abs(s[1] - 1.0), abs(s[2]))
        leave_box.terminal = True
        events.append(leave_box)
    return events


def _run_branch(params, y_end, tol, dy, cap, box, with_quadrature):
    n, lam = params.n, params.lam
    s0 = list(params.state0)
    if with_quadrature:
        s0.append(0.0)

    def rhs(_, s):
        out = list(ode_rhs(s[:3], n, lam))
        if with_quadrature:
            out.append(s[0])
        return out

    nsteps = int(round(abs(y_end) / dy))
    if nsteps == 0:
        arr = np.array(s0, dtype=float)[:, None]
        return np.array([0.0]), arr, "range"
    t_eval = np.linspace(0.0, np.sign(y_end) * nsteps * dy, nsteps + 1)
    # W and Y become tiny near the source; control their error relatively
    atol = np.full(len(s0), 1e-300)
    atol[1] = tol
    sol = solve_ivp(rhs, (0.0, t_eval[-1]), s0, method="RK45", t_eval=t_eval,
                    rtol=tol, atol=atol, events=_events(params, cap, box), first_step=0.1 * dy)
    if not sol.success:
        raise InvalidTrajectoryError(f"integration failed: {sol.message}")
    reason = "range"
    if sol.status == 1:
        if len(sol.t_events[0]):
            raise TrajectoryEscapeError(
                f"trajectory exceeded cap {cap:g} at y = {sol.t_events[0][0]:.6g}",
                y_exit=float(sol.t_events[0][0]))
        if len(sol.t_events[1]):
            raise InvalidTrajectoryError(f"Y changed sign at y = {sol.t_events[1][0]:.6g}")
        reason = "box"
    return sol.t, sol.y, reason


def _cumulative_hermite(ys, f, df):
    """Cumulative integral of f on a uniform grid, trapezoid plus end corrections."""
    h = np.diff(ys)
    pieces = 0.5 * h * (f[1:] + f[:-1]) + h * h / 12.0 * (df[:-1] - df[1:])
    return np.concatenate([[0.0], np.cumsum(pieces)])


def integrate_trajectory(params, y_min=-30.0, y_max=40.0, tol=1e-10, dy=0.01,
                         cap=BLOWUP_CAP, box=None, x_stop=None):
    """Integrate the soliton system on ``[y_min, y_max]`` from the initial point at y = 0.

    The backward branch runs toward the source; the forward branch carries the
    running quadrature of W.  ``box`` (G case) terminates the forward branch
    once max(|W|, |X - 1|, |Y|) exceeds it; ``x_stop`` terminates it once the
    radial coordinate passes that value.
    """
    if tol <= 0 or dy <= 0:
        raise InvalidInputError("tol and dy must be positive")
    if y_min > 0 or y_max < 0:
        raise InvalidInputError("the range must contain y = 0")
    if box is None and params.case == "G":
        box = 0.5
    yb, sb, _ = _run_branch(params, y_min, tol, dy, cap, None, False)
    yb, sb = yb[::-1], sb[:, ::-1]

    w = sb[0]
    if np.any(w > 0):
        # W = C1 e^y + O(e^{(2 mu + 1) y}); fit C1 over the first decade of W
        m = (yb <= yb[0] + np.log(10.0)) & (w > 0)
        c1 = float(np.exp(np.mean(np.log(w[m]) - yb[m])))
        tail = c1 * np.exp(yb[0])
        dw = w * (sb[1] ** 2 - params.lam * w * w)
        xb = tail + _cumulative_hermite(yb, w, dw)
    else:
        c1 = 0.0
        xb = np.zeros_like(yb)

    fwd_params = params
    stop_box = box
    if x_stop is not None:
        x_at0 = xb[-1]

        def run(y_end):
            return _run_branch_xstop(fwd_params, y_end, tol, dy, cap, stop_box, x_stop - x_at0)
        yf, sf, reason = run(y_max)
    else:
        yf, sf, reason = _run_branch(fwd_params, y_max, tol, dy, cap, stop_box, True)
    xf = xb[-1] + sf[3]

    ys = np.concatenate([yb, yf[1:]])
    states = np.concatenate([sb.T, sf[:3, 1:].T])
    xs = np.concatenate([xb, xf[1:]])
    return Trajectory(ys=ys, states=states, params=params, xs=xs, c1_fit=c1,
                      exit_reason=reason)


def _run_branch_xstop(params, y_end, tol, dy, cap, box, z_stop):
    n, lam = params.n, params.lam
    s0 = list(params.state0) + [0.0]

    def rhs(_, s):
        return list(ode_rhs(s[:3], n, lam)) + [s[0]]

    def xstop(_, s):
        return s[3] - z_stop
    xstop.terminal = True

    nsteps = int(round(abs(y_end) / dy))
    t_eval = np.linspace(0.0, nsteps * dy, nsteps + 1)
    atol = np.full(4, 1e-300)
    atol[1] = tol
    events = _events(params, cap, box) + [xstop]
    sol = solve_ivp(rhs, (0.0, t_eval[-1]), s0, method="RK45", t_eval=t_eval,
                    rtol=tol, atol=atol, events=events, first_step=0.1 * dy)
    if not sol.success:
        raise InvalidTrajectoryError(f"integration failed: {sol.message}")
    reason = "range"
    if sol.status == 1:
        if len(sol.t_events[0]):
            raise TrajectoryEscapeError(
                f"trajectory exceeded cap {cap:g} at y = {sol.t_events[0][0]:.6g}",
                y_exit=float(sol.t_events[0][0]))
        if len(sol.t_events[1]):
            raise InvalidTrajectoryError(f"Y changed sign at y = {sol.t_events[1][0]:.6g}")
        reason = "x_stop" if len(sol.t_events[-1]) else "box"
    if reason == "x_stop":
        # keep one sample past the stopping radius so that it lies inside the table
        y_last = sol.t[-1] + dy
        extra = solve_ivp(rhs, (sol.t[-1], y_last), sol.y[:, -1], method="RK45",
                          rtol=tol, atol=atol)
        return (np.append(sol.t, y_last),
                np.concatenate([sol.y, extra.y[:, -1:]], axis=1), reason)
    return sol.t, sol.y, reason


def lyapunov_check(traj):
    """Residual of the steady Lyapunov identity ``L' = 2 X^2 (L - 1)``, L = X^2 + Y^2.

    Returns the maximum over interior samples of the difference between the
    central finite-difference derivative of L and the identity.  Raises
    :class:`DataInconsistencyError` if L leaves the unit disk after starting in it,
    or if L increases anywhere inside it.
    """
    if len(traj.ys) < 3:
        raise InsufficientDataError("need at least 3 samples")
    xx, yy = traj.x, traj.y
    L = xx**2 + yy**2
    dL = (L[2:] - L[:-2]) / (traj.ys[2:] - traj.ys[:-2])
    ident = 2.0 * xx[1:-1] ** 2 * (L[1:-1] - 1.0)
    residual = float(np.max(np.abs(dL - ident)))
    # near the source 1 - L is below round-off, so both checks carry a slack
    slack = 16 * np.finfo(float).eps
    if L[0] < 1.0:
        if np.any(L > 1.0 + slack):
            raise DataInconsistencyError("L left the unit disk")
        if np.any(np.diff(L) > slack):
            raise DataInconsistencyError("L increased inside the unit disk")
    return residual


class ProfileValues(NamedTuple):
    psi: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    omega: np.ndarray
    omega1: np.ndarray


@dataclass
class SolitonProfile:
    """Background soliton tabulated against the radial coordinate x > 0.

    ``evaluator`` maps an array of x to :class:`ProfileValues`; it is exact for
    closed-form profiles and a fourth-order Hermite interpolant of the
    trajectory otherwise.
    """

    xs: np.ndarray
    psi: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    omega: np.ndarray
    omega1: np.ndarray
    params: SolitonParams
    a_fit: float = float("nan")
    c1_fit: float = float("nan")
    c2_fit: float = float("nan")
    mu_fit: float = float("nan")
    ys: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    evaluator: Optional[Callable] = field(default=None, repr=False)
    x_max: float = float("inf")

    @property
    def n(self):
        return self.params.n

    @property
    def lam(self):
        return self.params.lam

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if self.evaluator is None:
            raise InvalidInputError("profile has no evaluator")
        if np.any(x <= 0):
            raise DomainExitError("profile evaluated at x <= 0")
        if np.any(x > self.x_max):
            raise DomainExitError(f"profile evaluated beyond x_max = {self.x_max:g}")
        return self.evaluator(x)

    def ratios(self, x):
        """Return ``(psi'/psi, psi''/psi, 1/psi^2, omega, omega')`` at x."""
        v = self.evaluate(x)
        return v.psi1 / v.psi, v.psi2 / v.psi, 1.0 / v.psi**2, v.omega, v.omega1

    def x_omega(self, x):
        """``x * omega(x)``, extended continuously to x = 0."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        pos = x > 0
        out[~pos] = np.sqrt(self.n) - 1.0
        if np.any(pos):
            out[pos] = x[pos] * self.evaluate(x[pos]).omega
        return out

    def scaled(self, c):
        """Steady scaling ``psi_c(x) = c psi(x/c)``, ``omega_c(x) = omega(x/c)/c``."""
        if self.lam != 0:
            raise InvalidInputError("scaling symmetry needs lambda = 0")
        base = self.evaluator

        def ev(x):
            v = base(np.asarray(x) / c)
            return ProfileValues(c * v.psi, v.psi1, v.psi2 / c, v.omega / c, v.omega1 / c**2)
        states = None
        if self.states is not None:
            states = self.states.copy()
            states[:, 0] *= c
        return SolitonProfile(
            xs=self.xs * c, psi=self.psi * c, psi1=self.psi1.copy(), psi2=self.psi2 / c,
            omega=self.omega / c, omega1=self.omega1 / c**2, params=self.params,
            a_fit=self.a_fit * c ** (1 - 1 / np.sqrt(self.n)), c1_fit=self.c1_fit * c,
            c2_fit=self.c2_fit, mu_fit=self.mu_fit, ys=self.ys, states=states,
            evaluator=ev, x_max=self.x_max * c)


def _values_from_states(w, xv, yv, n, lam):
    rn = np.sqrt(n)
    psi = np.sqrt(n * (n - 1)) * w / yv
    p = xv / (rn * w)
    omega = (rn * xv - 1.0) / w
    q = -(n - 1) * p * p + (n - 1) / psi**2 + p * omega + lam
    return ProfileValues(psi, p * psi, q * psi, omega, n * q - lam)


def _trajectory_evaluator(ys, states, xs, n, lam):
    w, xv, yv = states.T
    rn = np.sqrt(n)
    lnw, lny, lnx = np.log(w), np.log(yv), np.log(xs)
    dlnw = xv**2 - lam * w**2
    dx = xv**3 - xv + yv**2 / rn + lam * (rn - xv) * w**2
    dlny = xv**2 - xv / rn - lam * w**2
    y_of_lnx = CubicHermiteSpline(lnx, ys, xs / w)
    state_spline = CubicHermiteSpline(ys, np.stack([lnw, xv, lny], axis=1),
                                      np.stack([dlnw, dx, dlny], axis=1))
    y0, g0 = ys[0], xv[0] - 1.0
    ev0 = 1.0 - 1.0 / rn

    def ev(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out_w = np.empty_like(x)
        out_x = np.empty_like(x)
        out_y = np.empty_like(x)
        lo = x < xs[0]
        if np.any(lo):
            # linearised flow at the source below the stored range (x ~ C1 e^y there)
            dyl = np.log(x[lo] / xs[0])
            out_w[lo] = w[0] * np.exp(dyl)
            out_x[lo] = 1.0 + g0 * np.exp(2.0 * dyl)
            out_y[lo] = yv[0] * np.exp(ev0 * dyl)
        hi = ~lo
        if np.any(hi):
            yy = y_of_lnx(np.log(x[hi]))
            st = state_spline(yy)
            out_w[hi] = np.exp(st[:, 0])
            out_x[hi] = st[:, 1]
            out_y[hi] = np.exp(st[:, 2])
        return _values_from_states(out_w, out_x, out_y, n, lam)
    return ev


def _loglog_fit(x, f):
    A = np.stack([np.log(x), np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(np.abs(f)), rcond=None)
    return float(coef[0]), float(coef[1])


def reconstruct_profile(traj):
    """Recover ``psi``, ``omega`` and their x-derivatives from a trajectory.

    Second derivatives come algebraically from the soliton ODE rather than
    from differencing.
    """
    w, xv, yv = traj.states.T
    if np.any(w <= 0) or np.any(yv <= 0):
        raise DegenerateTrajectoryError("W and Y must be positive along the trajectory")
    xs = traj.xs
    if np.any(np.diff(xs) <= 0):
        raise DegenerateTrajectoryError("x(y) is not strictly increasing")
    n, lam = traj.params.n, traj.params.lam
    vals = _values_from_states(w, xv, yv, n, lam)
    ev = _trajectory_evaluator(traj.ys, traj.states, xs, n, lam)

    rn = np.sqrt(n)
    m = xs <= xs[0] * 10.0
    if m.sum() < 2:
        m = np.arange(len(xs)) < 2
    a_fit = float(np.exp(np.mean(np.log(vals.psi[m]) - np.log(xs[m]) / rn)))
    c2 = float(np.exp(np.mean(np.log(yv[m]) - (1 - 1 / rn) * traj.ys[m])))
    g = np.abs(xv[m] - 1.0)
    mu = _loglog_fit(xs[m], g)[0] if np.all(g > 0) else float("nan")
    return SolitonProfile(
        xs=xs.copy(), psi=vals.psi, psi1=vals.psi1, psi2=vals.psi2, omega=vals.omega,
        omega1=vals.omega1, params=traj.params, a_fit=a_fit, c1_fit=traj.c1_fit,
        c2_fit=c2, mu_fit=mu, ys=traj.ys.copy(), states=traj.states.copy(),
        evaluator=ev, x_max=float(xs[-1]))


def hc_profile(n, eps=DEFAULT_EPS, x_crit=1.0, tol=1e-10, x_far=60.0, y_min=-30.0, dy=0.01,
               x0v=None, y0=None):
    """Half-complete steady profile normalised so that omega vanishes at ``x_crit``.

    The initial point is ``(eps^2, source_x0(eps), eps)`` unless ``x0v``/``y0`` are given;
    the steady scaling symmetry then fixes the radial scale.
    """
    params = SolitonParams(n=n, lam=0.0, w0=eps * eps, x0v=source_x0(eps) if x0v is None else x0v,
                           y0=eps if y0 is None else y0, eps_init=eps, case="HC")
    y_max = 40.0
    while True:
        traj = integrate_trajectory(params, y_min=y_min, y_max=y_max, tol=tol, dy=dy)
        prof = reconstruct_profile(traj)
        if np.any(prof.omega < 0):
            break
        y_max *= 2
        if y_max > 1e4:
            raise NoCriticalPointError("omega did not change sign")
    scale = x_crit / find_x_crit(prof)
    params = SolitonParams(n=n, lam=0.0, w0=params.w0 * scale, x0v=params.x0v, y0=params.y0,
                           eps_init=eps, case="HC")
    traj = integrate_trajectory(params, y_min=y_min, y_max=1e4, tol=tol, dy=dy, x_stop=x_far)
    return reconstruct_profile(traj)


def g_profile(n, lam, eps=DEFAULT_EPS, w0=None, tol=1e-10, y_min=-30.0, dy=0.01, box=0.5):
    """General (local) soliton on (0, delta); delta is where the trajectory leaves ``box``."""
    params = SolitonParams.near_source(n, lam=lam, eps=eps, w0=w0, case="G")
    traj = integrate_trajectory(params, y_min=y_min, y_max=1e4, tol=tol, dy=dy, box=box)
    return reconstruct_profile(traj)


def explicit_profile(a=1.0, xs=None):
    """Closed-form steady n = 4 soliton ``psi = a sqrt(x)``, ``omega = 1/x - 6/a^2``."""
    if xs is None:
        xs = np.geomspace(1e-3, 10.0, 2001)
    xs = np.asarray(xs, dtype=float)

    def ev(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        sx = np.sqrt(x)
        return ProfileValues(a * sx, 0.5 * a / sx, -0.25 * a / (x * sx), 1.0 / x - 6.0 / a**2,
                             -1.0 / x**2)
    v = ev(xs)
    params = SolitonParams(n=4, lam=0.0, w0=0.0, x0v=1.0, y0=0.0, case="HC")
    return SolitonProfile(xs=xs, psi=v.psi, psi1=v.psi1, psi2=v.psi2, omega=v.omega,
                          omega1=v.omega1, params=params, a_fit=a, evaluator=ev)


def template_profile(kind, xs, n=4, lam=0.0, a=1.0, exponent=None):
    """Analytic test metrics: ``flat`` (psi = x), ``sphere`` (psi = sin x),
    ``power`` (psi = a x^exponent, omega = (sqrt(n) - 1)/x)."""
    xs = np.asarray(xs, dtype=float)
    if kind == "flat":
        def ev(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            z = np.zeros_like(x)
            return ProfileValues(x.copy(), np.ones_like(x), z, z.copy(), z.copy())
    elif kind == "sphere":
        def ev(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            z = np.zeros_like(x)
            return ProfileValues(np.sin(x), np.cos(x), -np.sin(x), z, z.copy())
    elif kind == "power":
        k = 1.0 / np.sqrt(n) if exponent is None else exponent
        c = np.sqrt(n) - 1.0

        def ev(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            return ProfileValues(a * x**k, a * k * x ** (k - 1), a * k * (k - 1) * x ** (k - 2),
                                 c / x, -c / x**2)
    else:
        raise InvalidInputError(f"unknown template {kind!r}")
    v = ev(xs)
    params = SolitonParams(n=n, lam=lam, w0=0.0, x0v=1.0, y0=0.0,
                           case="HC" if lam == 0 else "G")
    return SolitonProfile(xs=xs, psi=v.psi, psi1=v.psi1, psi2=v.psi2, omega=v.omega,
                          omega1=v.omega1, params=params, evaluator=ev)


@dataclass
class AsymptoticsReport:
    a_fit: float
    c1_fit: float
    c2_fit: float
    mu_fit: float
    a_from_c1_c2: float
    slopes: dict
    deviations: dict
    limits: dict
    x_range: tuple

    def to_dict(self):
        return {
            "a_fit": self.a_fit, "c1_fit": self.c1_fit, "c2_fit": self.c2_fit,
            "mu_fit": self.mu_fit, "a_from_c1_c2": self.a_from_c1_c2,
            "slopes": self.slopes, "deviations": self.deviations, "limits": self.limits,
            "x_range": list(self.x_range),
        }


def fit_asymptotics(profile):
    """Log-linear regression of the profile over its smallest decade of x."""
    xs = profile.xs
    if xs[0] > 1e-3:
        raise InsufficientDataError("profile must reach at least two decades below 0.1")
    m = xs <= 10.0 * xs[0]
    if m.sum() < 4:
        raise InsufficientDataError("too few samples in the smallest decade")
    n = profile.n
    rn = np.sqrt(n)
    x = xs[m]
    slope_psi, icpt = _loglog_fit(x, profile.psi[m])
    slopes = {
        "psi": slope_psi,
        "omega": _loglog_fit(x, profile.omega[m])[0],
        "psi2_over_psi": _loglog_fit(x, profile.psi2[m] / profile.psi[m])[0],
        "omega1": _loglog_fit(x, profile.omega1[m])[0],
    }
    expected = {"psi": 1 / rn, "omega": -1.0, "psi2_over_psi": -2.0, "omega1": -2.0}
    deviations = {k: slopes[k] - expected[k] for k in slopes}
    limits = {
        "x_omega": float(xs[0] * profile.omega[0]),
        "x2_psi2_over_psi": float(xs[0] ** 2 * profile.psi2[0] / profile.psi[0]),
        "x2_omega1": float(xs[0] ** 2 * profile.omega1[0]),
    }
    a_fit = float(np.exp(np.mean(np.log(profile.psi[m]) - np.log(x) / rn)))
    c1, c2 = profile.c1_fit, profile.c2_fit
    a_c = float(np.sqrt(n * (n - 1)) * c1 ** (1 - 1 / rn) / c2) if np.isfinite(c1 * c2) else float("nan")
    return AsymptoticsReport(a_fit=a_fit, c1_fit=c1, c2_fit=c2, mu_fit=profile.mu_fit,
                             a_from_c1_c2=a_c, slopes=slopes, deviations=deviations,
                             limits=limits, x_range=(float(x[0]), float(x[-1])))


_FD8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def _d_dy(f, dy):
    """Eighth-order central first derivative on the interior of a uniform grid."""
    out = np.full_like(f, np.nan)
    k = len(_FD8) // 2
    acc = np.zeros(len(f) - 2 * k)
    for j, c in enumerate(_FD8):
        if c:
            acc += c * f[j:len(f) - 2 * k + j]
    out[k:-k] = acc / dy
    return out


def soliton_residual(profile, differentiate=False, relative=False):
    """Sup-norm residuals of the two second-order soliton equations.

    With ``differentiate`` the second derivatives are recomputed by
    differencing psi' and omega along the trajectory parameter, so the residual
    measures integration error; otherwise the stored derivative arrays are used.
    ``relative`` divides by the pointwise sum of term magnitudes.
    """
    n, lam = profile.n, profile.lam
    psi, psi1, om = profile.psi, profile.psi1, profile.omega
    psi2, om1 = profile.psi2, profile.omega1
    if differentiate:
        if profile.ys is None:
            raise InsufficientDataError("differentiated residual needs trajectory samples")
        dy = profile.ys[1] - profile.ys[0]
        w = profile.states[:, 0]
        psi2 = _d_dy(psi1, dy) / w
        om1 = _d_dy(om, dy) / w
        keep = np.isfinite(psi2)
        psi, psi1, om, psi2, om1 = (a[keep] for a in (psi, psi1, om, psi2, om1))
    r1 = n * psi2 - psi * om1 - lam * psi
    r2 = psi * psi2 + (n - 1) * psi1**2 - (n - 1) - psi * psi1 * om - lam * psi**2
    if relative:
        r1 = r1 / (np.abs(n * psi2) + np.abs(psi * om1) + np.abs(lam * psi))
        r2 = r2 / (np.abs(psi * psi2) + (n - 1) * psi1**2 + (n - 1) + np.abs(psi * psi1 * om)
                   + np.abs(lam) * psi**2)
    return float(np.max(np.abs(r1))), float(np.max(np.abs(r2)))


class CurvatureSample(NamedTuple):
    ric_radial: float
    ric_sphere: float
    scalar: float


def curvature_arrays(profile):
    n = profile.n
    psi, psi1, psi2 = profile.psi, profile.psi1, profile.psi2
    ric_radial = -n * psi2 / psi
    ric_sphere = n - 1 - psi * psi2 - (n - 1) * psi1**2
    return ric_radial, ric_sphere, ric_radial + n * ric_sphere / psi**2


def curvature(profile, index):
    """Ricci coefficients and scalar curvature at grid point ``xs[index]``."""
    if not -len(profile.xs) <= index < len(profile.xs):
        raise IndexError(f"index {index} out of range")
    rr, rs, sc = curvature_arrays(profile)
    return CurvatureSample(float(rr[index]), float(rs[index]), float(sc[index]))


@dataclass
class IdentityReport:
    tracing: np.ndarray
    conserved: np.ndarray
    tracing_max: float
    drift: float
    c0: float
    xs: np.ndarray

    def to_dict(self):
        return {"tracing_max": self.tracing_max, "drift": self.drift, "c0": self.c0,
                "x_range": [float(self.xs[0]), float(self.xs[-1])]}


def gradient_identities(profile, x_ref=None, x_window=None):
    """Check the traced soliton identity and the conserved quantity C0.

    tracing:   R + Laplacian(phi) + (n+1) lambda       (should vanish)
    conserved: R + |grad phi|^2 + 2 lambda phi        (should equal C0)

    phi is the end-corrected trapezoid quadrature of omega with phi(x_ref) = 0 (default the
    grid midpoint).  ``x_window`` restricts the check to a range of x.  For a
    steady half-complete profile C0 must be positive.
    """
    n, lam = profile.n, profile.lam
    xs = profile.xs
    sel = np.ones(len(xs), dtype=bool)
    if x_window is not None:
        sel = (xs >= x_window[0]) & (xs <= x_window[1])
    if sel.sum() < 2:
        raise InsufficientDataError("window holds fewer than two grid points")
    idx = np.nonzero(sel)[0]
    x = xs[idx]
    om = profile.omega[idx]
    psi, psi1 = profile.psi[idx], profile.psi1[idx]
    _, _, scal = curvature_arrays(profile)
    scal = scal[idx]
    lap = profile.omega1[idx] + n * psi1 / psi * om
    tracing = scal + lap + (n + 1) * lam
    h = np.diff(x)
    om1 = profile.omega1[idx]
    phi = np.concatenate([[0.0], np.cumsum(0.5 * h * (om[1:] + om[:-1])
                                           + h * h / 12.0 * (om1[:-1] - om1[1:]))])
    iref = len(x) // 2 if x_ref is None else int(np.argmin(np.abs(x - x_ref)))
    phi -= phi[iref]
    conserved = scal + om**2 + 2 * lam * phi
    c0 = float(np.median(conserved))
    drift = float((conserved.max() - conserved.min()) / abs(c0)) if c0 != 0 else float(
        conserved.max() - conserved.min())
    scale = np.abs(scal) + np.abs(lap) + (n + 1) * abs(lam)
    tracing_max = float(np.max(np.abs(tracing) / np.where(scale > 0, scale, 1.0)))
    if profile.params.case == "HC" and lam == 0 and profile.ys is not None and c0 <= 0:
        raise DataInconsistencyError(f"steady half-complete soliton with C0 = {c0:g} <= 0")
    return IdentityReport(tracing=tracing, conserved=conserved, tracing_max=tracing_max,
                          drift=drift, c0=c0, xs=x)


def find_x_crit(profile, rtol=1e-12):
    """Unique zero of omega, bracketed on the grid and refined by bisection."""
    om = profile.omega
    sign = np.sign(om)
    changes = np.nonzero(sign[1:] * sign[:-1] < 0)[0]
    if len(changes) == 0:
        raise NoCriticalPointError("omega has no sign change on the grid")
    if len(changes) > 1:
        raise DataInconsistencyError(f"omega changes sign {len(changes)} times")
    if not (om[0] > 0 and om[-1] < 0):
        raise DataInconsistencyError("omega must be positive near 0 and negative beyond x_crit")
    i = changes[0]
    lo, hi = profile.xs[i], profile.xs[i + 1]
    f = lambda x: float(profile.evaluate(np.array([x])).omega[0])
    return float(bisect(f, lo, hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps),
                        maxiter=400))
