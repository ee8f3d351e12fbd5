"""Steady hyperbolic Ricci solitons: Lie-derivative tensors, the soliton
equations in vector-field and gradient form, the traced gradient equation,
and an integral certificate for the nonexistence statement on a closed
manifold (here the flat torus grid).

A steady soliton moves by diffeomorphisms generated by V, so dg/dt = L_V g
and d^2g/dt^2 = L_V L_V g.  Substituting into the flow gives the residuals
evaluated below; in the gradient case V = grad f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .geometry import Grid


@dataclass
class SolitonCandidate:
    g: np.ndarray
    d: float
    V: np.ndarray | None = None
    f: np.ndarray | None = None

    def __post_init__(self):
        if (self.V is None) == (self.f is None):
            raise ValueError("give exactly one of V or f")
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        geo.spd_check(self.g)


# ---------------------------------------------------------------------------
# Lie derivatives

def lie_derivative(T: np.ndarray, V: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """(L_V T)_ij = V^k d_k T_ij + T_kj d_i V^k + T_ik d_j V^k (coordinate form)."""
    dT = geo.sym_gradient(T, grid, order)
    dV = geo.gradient(V, grid, order)  # dV[i, k] = d_i V^k
    out = np.einsum("k...,kij...->ij...", V, dT)
    A = np.einsum("kj...,ik...->ij...", T, dV)
    return geo.symmetrize(out + A + A.swapaxes(0, 1))


def lie_derivative_metric(g: np.ndarray, V: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """T_ij = g_ik nabla_j V^k + g_jk nabla_i V^k."""
    gam = geo.christoffel(g, grid, order)
    DV = geo.cov_deriv_vector(V, gam, grid, order)
    M = np.einsum("ik...,jk...->ij...", g, DV)  # nabla_j V_i
    return geo.symmetrize(M + M.swapaxes(0, 1))


def _second_derivative_terms(g, V, DDV):
    """(g_ip nabla_k nabla_j V^p + g_jp nabla_k nabla_i V^p) V^k."""
    A = np.einsum("ip...,kjp...,k...->ij...", g, DDV, V)
    return A + A.swapaxes(0, 1)


def second_lie(g: np.ndarray, V: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """L_V L_V g expanded through covariant derivatives of V:

        (g_ip nabla_k nabla_j V^p + g_jp nabla_k nabla_i V^p) V^k
        + g_kp (nabla_i V^k nabla_j V^p + nabla_j V^k nabla_i V^p)
        + g_ip nabla_j V^k nabla_k V^p + g_jp nabla_i V^k nabla_k V^p.
    """
    gam = geo.christoffel(g, grid, order)
    DV = geo.cov_deriv_vector(V, gam, grid, order)  # DV[a, k] = nabla_a V^k
    DDV = geo.cov_deriv_mixed(DV, gam, grid, order)  # DDV[k, j, p] = nabla_k nabla_j V^p
    out = _second_derivative_terms(g, V, DDV)
    out = out + 2.0 * np.einsum("kp...,ik...,jp...->ij...", g, DV, DV)
    B = np.einsum("ip...,jk...,kp...->ij...", g, DV, DV)
    return geo.symmetrize(out + B + B.swapaxes(0, 1))


# ---------------------------------------------------------------------------
# residuals

def soliton_residual(c: SolitonCandidate, grid: Grid, order: int = 2) -> np.ndarray:
    """LHS - RHS of the steady soliton equation for a vector field V:

        2R_ij + (g_ip nabla_k nabla_j V^p + g_jp nabla_k nabla_i V^p) V^k
      = 2 g^{pq} g_ik g_jl nabla_p V^k nabla_q V^l
        + g_ik nabla_j V^l nabla_l V^k + g_jk nabla_i V^l nabla_l V^k
        - (d + 4 div V)(g_il nabla_j V^l + g_jl nabla_i V^l)
        + 4/(n-1) (div V)^2 g_ij
        - 2/(n-1) (g_kl g^{pq} nabla_p V^k nabla_q V^l + nabla_p V^q nabla_q V^p) g_ij.
    """
    if c.V is None:
        raise ValueError("candidate carries no vector field")
    n = grid.n
    g, V = c.g, c.V
    cb = geo.curvature(g, grid, order, with_riemann=False)
    gi, gam = cb.inverse, cb.christoffel
    DV = geo.cov_deriv_vector(V, gam, grid, order)
    DDV = geo.cov_deriv_mixed(DV, gam, grid, order)
    lhs = 2.0 * cb.ricci + _second_derivative_terms(g, V, DDV)

    N = np.einsum("ik...,pk...->pi...", g, DV)  # N[p, i] = nabla_p V_i
    T = N + N.swapaxes(0, 1)
    div = np.einsum("kk...->...", DV)
    P = np.einsum("jl...,lk...->jk...", DV, DV)
    gP = np.einsum("ik...,jk...->ij...", g, P)
    rhs = 2.0 * np.einsum("pq...,pi...,qj...->ij...", gi, N, N) + gP + gP.swapaxes(0, 1)
    rhs = rhs - (c.d + 4.0 * div) * T
    s = (4.0 / (n - 1)) * div ** 2 - (2.0 / (n - 1)) * (
        np.einsum("kl...,pq...,pk...,ql...->...", g, gi, DV, DV) + np.einsum("pq...,qp...->...", DV, DV))
    rhs = rhs + s * g
    return geo.symmetrize(lhs - rhs)


@dataclass
class _GradientTerms:
    gi: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    grad_up: np.ndarray  # nabla^k f
    H: np.ndarray  # nabla_i nabla_j f
    DH: np.ndarray  # DH[k, i, j] = nabla_k nabla_i nabla_j f
    lap: np.ndarray  # Delta f
    H_sq: np.ndarray  # |nabla^2 f|^2


def _gradient_terms(c: SolitonCandidate, grid: Grid, order: int) -> _GradientTerms:
    if c.f is None:
        raise ValueError("candidate carries no potential f")
    cb = geo.curvature(c.g, grid, order, with_riemann=False)
    gi, gam = cb.inverse, cb.christoffel
    grad_up = np.einsum("kl...,l...->k...", gi, geo.gradient(c.f, grid, order))
    H = geo.hessian(c.f, gam, grid, order)
    DH = geo.cov_deriv_sym(H, gam, grid, order)
    return _GradientTerms(gi, cb.ricci, cb.scalar, grad_up, H, DH,
                          geo.trace_sym(H, gi), geo.norm_sq(H, gi))


def _gradient_residual(t: _GradientTerms, g: np.ndarray, d: float, n: int) -> np.ndarray:
    HH = np.einsum("pq...,pi...,qj...->ij...", t.gi, t.H, t.H)
    out = t.ricci + np.einsum("kij...,k...->ij...", t.DH, t.grad_up)
    out = out - 2.0 * HH + (d + 4.0 * t.lap) * t.H
    out = out - (2.0 / (n - 1)) * (t.lap ** 2 - t.H_sq) * g
    return geo.symmetrize(out)


def _trace_residual(t: _GradientTerms, d: float, n: int) -> np.ndarray:
    # nabla_k(Delta f nabla^k f) by the product rule, nabla_k Delta f = g^{ij} nabla_k H_ij
    grad_lap = np.einsum("ij...,kij...->k...", t.gi, t.DH)
    div_term = np.einsum("k...,k...->...", grad_lap, t.grad_up) + t.lap ** 2
    return (t.scalar + div_term + (2.0 / (n - 1)) * t.H_sq
            + ((n - 3) / (n - 1)) * t.lap ** 2 + d * t.lap)


def gradient_soliton_residual(c: SolitonCandidate, grid: Grid, order: int = 2) -> np.ndarray:
    """LHS - RHS of the gradient soliton equation

        R_ij + nabla_k(nabla_i nabla_j f) nabla^k f
      = 2 g^{pq} nabla_p nabla_i f nabla_q nabla_j f - (d + 4 Delta f) nabla_i nabla_j f
        + 2/(n-1) (Delta f)^2 g_ij - 2/(n-1) |nabla^2 f|^2 g_ij.
    """
    return _gradient_residual(_gradient_terms(c, grid, order), c.g, c.d, grid.n)


def trace_residual(c: SolitonCandidate, grid: Grid, order: int = 2) -> np.ndarray:
    """R + nabla_k(Delta f nabla^k f) + 2/(n-1)|nabla^2 f|^2 + (n-3)/(n-1)(Delta f)^2 + d Delta f.

    Built from the same discrete operators as ``gradient_soliton_residual``,
    so it equals the g-trace of that residual up to roundoff.
    """
    return _trace_residual(_gradient_terms(c, grid, order), c.d, grid.n)


# ---------------------------------------------------------------------------
# integral certificate

@dataclass
class SolitonReport:
    gradient_residual: np.ndarray
    trace_residual: np.ndarray
    r0: float
    divergence_integral: float  # int nabla_k(Delta f nabla^k f) dV
    laplacian_integral: float  # int d Delta f dV
    quadratic_integral: float  # Q
    hessian_norm_sq: float  # int |nabla^2 f|^2 dV
    residual_sup: float
    tolerance: float
    is_soliton: bool
    implication_holds: bool
    passed: bool

    def to_dict(self) -> dict:
        keys = ("r0", "divergence_integral", "laplacian_integral", "quadratic_integral",
                "hessian_norm_sq", "residual_sup", "tolerance", "is_soliton",
                "implication_holds", "passed")
        out = {k: getattr(self, k) for k in keys}
        out["trace_residual_sup"] = float(np.max(np.abs(self.trace_residual)))
        return out


def nonexistence_certificate(c: SolitonCandidate, grid: Grid, order: int = 2) -> SolitonReport:
    """Integral check of: gradient soliton with r(0) >= 0 on a closed manifold
    (n >= 3) forces Hess f = 0.

    Integrating the traced equation, the two divergence terms drop out, so
    vol * r(0) = -Q - int d Delta f with Q >= 0.  Divergences are taken in
    flux form (1/sqrt g) d_k(sqrt g X^k) so their integrals telescope.
    A quantity counts as zero below max(1e-8, 10 h^2 * scale), where scale
    is the larger of the oscillations sup|f - mean f| and sup|g - mean g|:
    both vanish for a constant f on a constant metric.
    """
    n = grid.n
    t = _gradient_terms(c, grid, order)
    res_grad = _gradient_residual(t, c.g, c.d, n)
    res_trace = _trace_residual(t, c.d, n)
    vol = geo.integrate_volume(np.ones(grid.shape), c.g, grid)
    r0 = geo.integrate_volume(t.scalar, c.g, grid) / vol
    div_int = geo.integrate_volume(geo.divergence_flux(t.lap * t.grad_up, c.g, grid, order), c.g, grid)
    lap_int = c.d * geo.integrate_volume(geo.divergence_flux(t.grad_up, c.g, grid, order), c.g, grid)
    q_density = (2.0 / (n - 1)) * t.H_sq + ((n - 3) / (n - 1)) * t.lap ** 2
    Q = geo.integrate_volume(q_density, c.g, grid)
    hess = geo.integrate_volume(t.H_sq, c.g, grid)
    axes = tuple(range(-n, 0))
    scale = max(float(np.max(np.abs(c.f - np.mean(c.f)))),
                float(np.max(np.abs(c.g - np.mean(c.g, axis=axes, keepdims=True)))))
    tol = max(1e-8, 10.0 * grid.h ** 2 * scale)
    res_sup = float(np.sqrt(np.max(geo.norm_sq(res_grad, t.gi))))
    is_soliton = res_sup <= tol
    implication = not (is_soliton and r0 >= -tol) or hess / vol <= tol
    passed = implication and abs(div_int) <= tol and abs(lap_int) <= tol
    return SolitonReport(res_grad, res_trace, float(r0), float(div_int), float(lap_int), float(Q), float(hess),
                         res_sup, tol, bool(is_soliton), bool(implication), bool(passed))


# ---------------------------------------------------------------------------
# candidates from plain parameters

def _wave(spec: dict, grid: Grid) -> np.ndarray:
    """amplitude * sin(2 pi mode x_axis / L + phase)."""
    X = grid.coords()
    axis = int(spec.get("axis", 0))
    if not 0 <= axis < grid.n:
        raise ValueError(f"axis must be in [0, {grid.n - 1}], got {axis}")
    kappa = 2.0 * math.pi * float(spec.get("mode", 1)) / grid.L
    return float(spec.get("amplitude", 0.1)) * np.sin(kappa * X[axis] + float(spec.get("phase", 0.0)))


def metric_from_dict(spec: dict, grid: Grid) -> np.ndarray:
    """flat, or conformal e^{2 phi} delta with phi a single sine wave."""
    kind = spec.get("kind", "flat")
    if kind == "flat":
        return geo.identity_field(grid)
    if kind == "conformal":
        return geo.identity_field(grid) * np.exp(2.0 * _wave(spec, grid))
    raise ValueError(f"unknown metric kind {kind!r}")


def candidate_from_dict(spec: dict, grid: Grid) -> SolitonCandidate:
    """spec = {"metric": {...}, "d": float, and "f": {...} or "V": [{...} per axis]}.

    ``f`` may be {"kind": "constant", "value": c} or a sine wave spec.
    """
    g = metric_from_dict(spec.get("metric", {"kind": "flat"}), grid)
    d = float(spec.get("d", 1.0))
    if "f" in spec:
        fs = spec["f"]
        if fs.get("kind", "sine") == "constant":
            f = np.full(grid.shape, float(fs.get("value", 0.0)))
        else:
            f = _wave(fs, grid)
        return SolitonCandidate(g, d, f=f)
    if "V" in spec:
        comps = spec["V"]
        if len(comps) != grid.n:
            raise ValueError(f"V needs {grid.n} components, got {len(comps)}")
        V = np.stack([np.full(grid.shape, float(s)) if isinstance(s, (int, float)) else _wave(s, grid)
                      for s in comps])
        return SolitonCandidate(g, d, V=V)
    raise ValueError("candidate needs 'f' or 'V'")
