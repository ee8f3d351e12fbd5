"""Right-hand side of the dissipative hyperbolic flow and its derived identities.

The flow is

    d^2 g_ij/dt^2 = -2 R_ij + 2 g^{pq} k_ip k_jq - (d + 2u) k_ij
                    + (u^2 - v)/(n - 1) g_ij,          k = dg/dt,

written here as -2 Ric + G(g, k) with G drawn from the six-coefficient
family of ``general_G``.  Besides the RHS this module evaluates the trace
diagnostics u, v, w and residuals of the evolution equations they obey.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import geometry as geo
from .geometry import Grid


@dataclass(frozen=True)
class FlowParams:
    n: int
    d: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients (a, b, d_raw, e, f, h) of

        a g^{pq}k_ip k_jq + b u k + d_raw k + e u g + f u^2 g + h (dg^{pq}/dt k_pq) g.

    ``d_raw`` keeps the sign of the family, so the dissipative flow has
    d_raw = -d.
    """

    a: float = 0.0
    b: float = 0.0
    d_raw: float = 0.0
    e: float = 0.0
    f: float = 0.0
    h: float = 0.0

    @classmethod
    def dissipative(cls, params: FlowParams) -> "CoefficientSet":
        c = 1.0 / (params.n - 1)
        return cls(a=2.0, b=-2.0, d_raw=-params.d, e=0.0, f=c, h=c)


@dataclass
class FlowState:
    t: float
    g: np.ndarray
    k: np.ndarray

    def copy(self) -> "FlowState":
        return FlowState(self.t, self.g.copy(), self.k.copy())


@dataclass
class TraceDiagnostics:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    G_matrix: np.ndarray  # G_i^k = k_ij g^{jk}


def velocity_invariants(k: np.ndarray, gi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """u = g^{ij}k_ij and v = g^{ik}g^{jl}k_ij k_kl (v as a sum of squares)."""
    return geo.trace_sym(k, gi), geo.norm_sq(k, gi)


def general_G(g: np.ndarray, k: np.ndarray, coeffs: CoefficientSet, gi: np.ndarray | None = None) -> np.ndarray:
    """Lower-order part of the general flow family.

    The inverse-metric rate is taken as dg^{pq}/dt = -g^{pa}g^{qb}k_ab, so
    dg^{pq}/dt k_pq = -v exactly.
    """
    if gi is None:
        gi = geo.invert_metric(g)
    n = g.shape[0]
    c = coeffs
    out = np.empty((n, n) + g.shape[2:])
    _kernels.general_g(geo._flat(g, 2), geo._flat(gi, 2), geo._flat(k, 2),
                       c.a, c.b, c.d_raw, c.e, c.f, c.h, out.reshape((n, n, -1)))
    return out


def dissipative_rhs(state: FlowState, params: FlowParams, grid: Grid, order: int = 2) -> np.ndarray:
    """d^2 g/dt^2 of the dissipative flow: -2 Ric + G with the dissipative coefficients."""
    gi = geo.invert_metric(state.g)
    gam = geo.christoffel_from(gi, geo.sym_gradient(state.g, grid, order))
    ric = geo.ricci_from(gam, grid, order)
    G = general_G(state.g, state.k, CoefficientSet.dissipative(params), gi)
    return -2.0 * ric + G


def trace_quantities(state: FlowState) -> TraceDiagnostics:
    gi = geo.invert_metric(state.g)
    G = geo.mixed(state.k, gi)
    G2 = np.einsum("ij...,jk...->ik...", G, G)
    u = np.einsum("ii...->...", G)
    v = geo.norm_sq(state.k, gi)
    w = np.einsum("ij...,ji...->...", G2, G)
    return TraceDiagnostics(u=u, v=v, w=w, G_matrix=G)


# ---------------------------------------------------------------------------
# residuals of the derived evolution equations

def _unpack_triplet(traj) -> tuple[FlowState, FlowState, FlowState, float]:
    prev, mid, nxt = traj
    dt1 = mid.t - prev.t
    dt2 = nxt.t - mid.t
    if not dt1 > 0 or abs(dt1 - dt2) > 1e-9 * max(abs(dt1), 1.0):
        raise ValueError(f"need three equally spaced states, got spacings {dt1}, {dt2}")
    return prev, mid, nxt, 0.5 * (dt1 + dt2)


def u_evolution_residual(traj, params: FlowParams, grid: Grid, order: int = 2) -> np.ndarray:
    """Centered du/dt minus (-2R - (n-2)/(n-1) u^2 - d u - v/(n-1))."""
    prev, mid, nxt, dt = _unpack_triplet(traj)
    n, d = params.n, params.d
    u_p = trace_quantities(prev).u
    u_n = trace_quantities(nxt).u
    tq = trace_quantities(mid)
    R = geo.curvature(mid.g, grid, order, with_riemann=False).scalar
    rhs = -2.0 * R - (n - 2) / (n - 1) * tq.u ** 2 - d * tq.u - tq.v / (n - 1)
    return (u_n - u_p) / (2.0 * dt) - rhs


def v_evolution_residual(traj, params: FlowParams, grid: Grid, order: int = 2) -> np.ndarray:
    """Centered dv/dt minus
    2w - 4 g^{ik}g^{jl} k_ij R_kl - (4 + 2/(n-1)) u v - 2 d v + 2/(n-1) u^3."""
    prev, mid, nxt, dt = _unpack_triplet(traj)
    n, d = params.n, params.d
    v_p = trace_quantities(prev).v
    v_n = trace_quantities(nxt).v
    tq = trace_quantities(mid)
    cb = geo.curvature(mid.g, grid, order, with_riemann=False)
    gi = cb.inverse
    kR = np.einsum("ik...,jl...,ij...,kl...->...", gi, gi, mid.k, cb.ricci)
    rhs = (2.0 * tq.w - 4.0 * kR - (4.0 + 2.0 / (n - 1)) * tq.u * tq.v
           - 2.0 * d * tq.v + 2.0 / (n - 1) * tq.u ** 3)
    return (v_n - v_p) / (2.0 * dt) - rhs


# Coefficients of the quadratic first-derivative bracket of the scalar
# curvature wave equation, over the invariants
#   (grad u . div k, |nabla k|^2, |div k|^2, nabla_a k_bc nabla^c k^ab, |grad u|^2).
# "nominal" is the covariant bracket as usually quoted; "closed" is the set
# for which the equation is an identity of the flow.
BRACKETS = {
    "nominal": (4.0, 4.0, -6.0, -2.0, 0.0),
    "closed": (-2.0, -0.5, 0.0, 1.0, 1.5),
}


def quadratic_invariants(k: np.ndarray, gi: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> tuple:
    """The five quadratic first-derivative invariants of k at one snapshot."""
    Dk = geo.cov_deriv_sym(k, gam, grid, order)  # Dk[a, b, c] = nabla_a k_bc
    Dk_up = np.einsum("ab...,cd...,ef...,bdf...->ace...", gi, gi, gi, Dk)  # nabla^a k^ce
    du = np.einsum("ij...,aij...->a...", gi, Dk)  # d_a u (g parallel)
    divk = np.einsum("ab...,abc...->c...", gi, Dk)  # (div k)_c
    gu_divk = np.einsum("ab...,a...,b...->...", gi, du, divk)
    dk_sq = np.einsum("abc...,abc...->...", Dk, Dk_up)
    divk_sq = np.einsum("ab...,a...,b...->...", gi, divk, divk)
    cross = np.einsum("abc...,cab...->...", Dk, Dk_up)
    du_sq = np.einsum("ab...,a...,b...->...", gi, du, du)
    return gu_divk, dk_sq, divk_sq, cross, du_sq


def scalar_wave_residual(traj, params: FlowParams, grid: Grid, order: int = 2, bracket: str = "nominal") -> np.ndarray:
    """Centered d^2R/dt^2 minus

        Delta R + 2|Ric|^2 - (d + 2u) dR/dt - (u^2 - v) R/(n-1) + Q(nabla k),

    where Q is the quadratic bracket chosen by ``bracket`` (a key of
    ``BRACKETS`` or an explicit 5-tuple of coefficients).
    """
    prev, mid, nxt, dt = _unpack_triplet(traj)
    n, d = params.n, params.d
    coef = BRACKETS[bracket] if isinstance(bracket, str) else tuple(bracket)
    R_p = geo.curvature(prev.g, grid, order, with_riemann=False).scalar
    R_n = geo.curvature(nxt.g, grid, order, with_riemann=False).scalar
    cb = geo.curvature(mid.g, grid, order, with_riemann=False)
    gi, gam, R = cb.inverse, cb.christoffel, cb.scalar
    Rt = (R_n - R_p) / (2.0 * dt)
    Rtt = (R_n - 2.0 * R + R_p) / (dt * dt)
    u, v = velocity_invariants(mid.k, gi)
    rhs = (geo.laplace_beltrami(R, gi, gam, grid, order) + 2.0 * cb.ricci_norm_sq
           - (d + 2.0 * u) * Rt - (u * u - v) * R / (n - 1))
    for c, q in zip(coef, quadratic_invariants(mid.k, gi, gam, grid, order)):
        if c != 0.0:
            rhs = rhs + c * q
    return Rtt - rhs
