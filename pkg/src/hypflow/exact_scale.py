"""Scale factor of homothetic solutions g(t) = rho(t) g(0) over Einstein data.

With Ric(g0) = lam g0 and dg/dt(0) = mu g0, two ODEs for rho are in play:

* ``closed-form``:   rho'' = -d rho' - 2 lam, solved in closed form;
* ``substitution``:  rho'' = -2 lam - d rho' + (2 - n) rho'^2 / rho, which is
  what the flow itself produces on the ansatz (and what the PDE solver
  reproduces).  The two agree for n = 2.

For the substitution ODE the variable w = rho^(n-1) obeys the linear-looking
w'' + d w' = -2 lam (n-1) w^((n-2)/(n-1)), which is used for fate analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import bisect

from .errors import DegenerateScale

EPS_SHRINK = 1e-8
ROOT_XTOL = 1e-13


class ScaleVariant(str, Enum):
    CLOSED_FORM = "closed-form"
    SUBSTITUTION = "substitution"


@dataclass(frozen=True)
class ScaleProblem:
    lam: float
    mu: float
    d: float
    n: int = 3

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")


class FateKind(str, Enum):
    FINITE_TIME = "shrinks_at_finite_time"
    SMOOTH_FOREVER = "smooth_forever"
    ASYMPTOTIC = "shrinks_as_t_to_infinity"


@dataclass(frozen=True)
class ScaleFate:
    kind: FateKind
    T: float | None = None

    def __post_init__(self):
        if self.kind is FateKind.FINITE_TIME and not (self.T is not None and self.T > 0):
            raise ValueError("finite-time shrink needs T > 0")

    def describe(self) -> str:
        if self.kind is FateKind.FINITE_TIME:
            return f"shrinks at T≈{self.T:.4f}"
        if self.kind is FateKind.ASYMPTOTIC:
            return "shrinks as t -> infinity"
        return "smooth forever"

    def to_dict(self) -> dict:
        return {"fate": self.kind.value, "T": self.T}


# ---------------------------------------------------------------------------
# right-hand sides and the closed form

def rho_closed_form(p: ScaleProblem, t):
    """(rho, rho') of rho'' = -d rho' - 2 lam with rho(0) = 1, rho'(0) = mu."""
    lam, mu, d = p.lam, p.mu, p.d
    c = mu / d + 2.0 * lam / d ** 2
    e = np.exp(-d * np.asarray(t, dtype=float))
    rho = 1.0 - 2.0 * lam / d * np.asarray(t, dtype=float) - c * (e - 1.0)
    rhop = -2.0 * lam / d + (mu + 2.0 * lam / d) * e
    if np.ndim(rho) == 0:
        return float(rho), float(rhop)
    return rho, rhop


def closed_form_rhs(p: ScaleProblem, rho: float, rhop: float) -> float:
    return -2.0 * p.lam - p.d * rhop


def substitution_ode_rhs(p: ScaleProblem, rho: float, rhop: float) -> float:
    """rho'' = -2 lam - d rho' + (2 - n) rho'^2 / rho."""
    if not rho > 0:
        raise DegenerateScale(None, rho)
    return -2.0 * p.lam - p.d * rhop + (2 - p.n) * rhop * rhop / rho


_RHS = {
    ScaleVariant.CLOSED_FORM: closed_form_rhs,
    ScaleVariant.SUBSTITUTION: substitution_ode_rhs,
}


# ---------------------------------------------------------------------------
# fixed-step integration

@dataclass
class ScaleSolution:
    problem: ScaleProblem
    variant: ScaleVariant
    t: np.ndarray
    rho: np.ndarray
    rhop: np.ndarray
    shrink_time: float | None = None  # first sample time with rho < EPS_SHRINK

    def __post_init__(self):
        self._spline = None

    def evaluate(self, t):
        """(rho, rho') at arbitrary times inside the sampled range."""
        if self.variant is ScaleVariant.CLOSED_FORM:
            return rho_closed_form(self.problem, t)
        if self._spline is None:
            rpp = np.array([substitution_ode_rhs(self.problem, r, v) if r > 0 else np.nan
                            for r, v in zip(self.rho, self.rhop)])
            self._spline = (CubicHermiteSpline(self.t, self.rho, self.rhop),
                            CubicHermiteSpline(self.t, self.rhop, rpp))
        s, sp = self._spline
        return s(t), sp(t)


def integrate_scale(p: ScaleProblem, variant, dt: float, t_end: float) -> ScaleSolution:
    """Classical RK4 on (rho, rho') with a fixed step; stops once rho < EPS_SHRINK."""
    variant = ScaleVariant(variant)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    f = _RHS[variant]
    steps = int(math.ceil(t_end / dt - 1e-12))
    h = t_end / steps
    ts, rs, vs = [0.0], [1.0], [p.mu]
    r, v = 1.0, p.mu
    shrink = None
    for i in range(steps):
        try:
            k1r, k1v = v, f(p, r, v)
            k2r, k2v = v + 0.5 * h * k1v, f(p, r + 0.5 * h * k1r, v + 0.5 * h * k1v)
            k3r, k3v = v + 0.5 * h * k2v, f(p, r + 0.5 * h * k2r, v + 0.5 * h * k2v)
            k4r, k4v = v + h * k3v, f(p, r + h * k3r, v + h * k3v)
        except DegenerateScale:
            shrink = (i + 1) * h
            break
        r = r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
        v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        ts.append((i + 1) * h)
        rs.append(r)
        vs.append(v)
        if r < EPS_SHRINK:
            shrink = ts[-1]
            break
    return ScaleSolution(p, variant, np.array(ts), np.array(rs), np.array(vs), shrink)


# ---------------------------------------------------------------------------
# fate classification

def _first_root(fn, lo: float, hi: float) -> float:
    return bisect(fn, lo, hi, xtol=ROOT_XTOL, maxiter=500)


def _grow_bracket(fn, lo: float, step: float) -> float:
    hi = lo + step
    while fn(hi) > 0:
        lo, hi = hi, hi + 2.0 * (hi - lo)
        if hi > 1e12:
            raise RuntimeError("no sign change found")
    return hi


def _fate_closed_form(p: ScaleProblem) -> ScaleFate:
    lam, mu, d = p.lam, p.mu, p.d
    rho = lambda t: rho_closed_form(p, t)[0]
    slope = -2.0 * lam / d  # asymptotic slope of rho
    amp = mu + 2.0 * lam / d  # rho' = slope + amp e^{-dt}
    # rho has at most one critical point, where e^{-dt0} = -slope / amp
    t0 = None
    if amp != 0.0 and 0.0 < -slope / amp < 1.0:
        t0 = -math.log(-slope / amp) / d
    if t0 is not None and rho(t0) <= 0.0:
        if rho(t0) == 0.0:
            return ScaleFate(FateKind.FINITE_TIME, t0)
        return ScaleFate(FateKind.FINITE_TIME, _first_root(rho, 0.0, t0))
    start = t0 if t0 is not None else 0.0
    if slope < 0.0:
        hi = _grow_bracket(rho, start, 1.0 / d)
        return ScaleFate(FateKind.FINITE_TIME, _first_root(rho, start, hi))
    if slope > 0.0:
        return ScaleFate(FateKind.SMOOTH_FOREVER)
    limit = 1.0 + mu / d
    if limit < 0.0:
        return ScaleFate(FateKind.FINITE_TIME, _first_root(rho, 0.0, _grow_bracket(rho, 0.0, 1.0 / d)))
    if limit == 0.0:
        return ScaleFate(FateKind.ASYMPTOTIC)
    return ScaleFate(FateKind.SMOOTH_FOREVER)


def _w_rhs(p: ScaleProblem):
    a = (p.n - 2) / (p.n - 1)
    c = -2.0 * p.lam * (p.n - 1)

    def rhs(t, y):
        w, wp = y
        return [wp, c * max(w, 0.0) ** a - p.d * wp]
    return rhs


def _fate_substitution(p: ScaleProblem) -> ScaleFate:
    n, lam, mu, d = p.n, p.lam, p.mu, p.d
    if n == 2:
        return _fate_closed_form(p)
    m = (n - 1) * mu  # w'(0)
    if lam == 0.0:
        # w = 1 + (m/d)(1 - e^{-dt}) exactly
        limit = 1.0 + m / d
        if limit < 0.0:
            return ScaleFate(FateKind.FINITE_TIME, -math.log(1.0 + d / m) / d)
        if limit == 0.0:
            return ScaleFate(FateKind.ASYMPTOTIC)
        return ScaleFate(FateKind.SMOOTH_FOREVER)
    if lam < 0.0 and mu >= 0.0:
        return ScaleFate(FateKind.SMOOTH_FOREVER)  # (w' e^{dt}) increases, so w' stays >= 0

    def hit_zero(t, y):
        return y[0]
    hit_zero.terminal = True
    hit_zero.direction = -1

    def turns_up(t, y):
        return y[1]
    turns_up.terminal = True
    turns_up.direction = 1

    events = [hit_zero, turns_up] if lam < 0.0 else [hit_zero]
    y0 = [1.0, m]
    t0 = 0.0
    span = 10.0 / d
    while t0 < 1e9 / d:
        sol = solve_ivp(_w_rhs(p), (t0, t0 + span), y0, method="DOP853", rtol=1e-12, atol=1e-14,
                        events=events, dense_output=True)
        if sol.t_events[0].size:
            te = float(sol.t_events[0][0])
            lo = max(t0, te - 1e-3 * span)
            hi = min(sol.t[-1], te + 1e-3 * span)
            wfun = lambda t: sol.sol(t)[0]
            if wfun(lo) > 0 and wfun(hi) < 0:
                te = _first_root(wfun, lo, hi)
            return ScaleFate(FateKind.FINITE_TIME, te)
        if len(events) > 1 and sol.t_events[1].size:
            return ScaleFate(FateKind.SMOOTH_FOREVER)
        t0, y0 = sol.t[-1], sol.y[:, -1]
        span *= 2.0
    return ScaleFate(FateKind.ASYMPTOTIC)


def classify_fate(p: ScaleProblem, variant=ScaleVariant.CLOSED_FORM) -> ScaleFate:
    """Fate of rho decided from rho itself: root bracketing plus limit analysis."""
    variant = ScaleVariant(variant)
    if variant is ScaleVariant.CLOSED_FORM:
        return _fate_closed_form(p)
    return _fate_substitution(p)


def alternative_conditions(p: ScaleProblem) -> dict:
    """Finite-time-shrink predictions of two alternative closed-form criteria for lam < 0.

    ``case_text`` uses rho(T0) <= 0 with T0 = -(1/d) ln(2 lam / (2 lam + d mu));
    ``summary`` uses rho(+(1/d) ln(...)) >= 0.  Kept for comparison only;
    ``classify_fate`` never consults them.  Entries are None where a
    condition is not defined (the logarithm argument must be positive).
    """
    lam, mu, d = p.lam, p.mu, p.d
    out = {"case_text": None, "summary": None}
    if lam > 0:
        out["case_text"] = out["summary"] = True
    elif lam == 0:
        out["case_text"] = out["summary"] = mu < -d
    elif mu >= 0:
        out["case_text"] = out["summary"] = False
    else:
        arg = 2.0 * lam / (2.0 * lam + d * mu)
        if arg > 0:
            T0 = -math.log(arg) / d
            out["case_text"] = rho_closed_form(p, T0)[0] <= 0.0
            t1 = math.log(arg) / d
            out["summary"] = (rho_closed_form(p, t1)[0] >= 0.0) if t1 >= 0 else None
    return out
