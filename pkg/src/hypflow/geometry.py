"""Discrete Riemannian geometry on a flat periodic grid.

Field layout (numpy arrays, grid axes always last):

    scalar       (*grid)
    vector       (n, *grid)              V[k]
    sym tensor   (n, n, *grid)           T[i, j], exactly symmetric
    christoffel  (n, n, n, *grid)        G[k, i, j] = Gamma^k_ij
    riemann      (n, n, n, n, *grid)     R[i, j, k, l], fully lowered

Symmetric tensors are held densely but every producer fills the upper
triangle and mirrors it, so T[i, j] and T[j, i] are the same bits.  The
packed upper-triangle layout (``pack_sym``) is used for I/O and for the
first-order system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import DegenerateMetric

EPS_SPD = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the torus [0, L)^n."""

    n: int
    N: int
    L: float = 2.0 * math.pi

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"dimension must be >= 2, got {self.n}")
        if self.N < 8:
            raise ValueError(f"points per axis must be >= 8, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    def coords(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.N) * self.h
        return tuple(np.meshgrid(*([x] * self.n), indexing="ij"))

    def integrate(self, f: np.ndarray) -> float:
        """Periodic trapezoidal rule (flat measure)."""
        return float(np.sum(f) * self.cell_volume)

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.n, self.N * factor, self.L)


# ---------------------------------------------------------------------------
# symmetric storage helpers

@lru_cache(maxsize=None)
def sym_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """Upper-triangle index pairs (i <= j) in packed order."""
    return tuple((i, j) for i in range(n) for j in range(i, n))


def pack_sym(T: np.ndarray) -> np.ndarray:
    n = T.shape[0]
    return np.stack([T[i, j] for i, j in sym_pairs(n)])


def unpack_sym(P: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, n) + P.shape[1:], dtype=P.dtype)
    for a, (i, j) in enumerate(sym_pairs(n)):
        out[i, j] = P[a]
        out[j, i] = P[a]
    return out


def symmetrize(T: np.ndarray) -> np.ndarray:
    """Exact symmetrization over the first two axes."""
    S = 0.5 * (T + T.swapaxes(0, 1))
    n = T.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            S[j, i] = S[i, j]
    return S


def identity_field(grid: Grid, scale: float = 1.0) -> np.ndarray:
    g = np.zeros((grid.n, grid.n) + grid.shape)
    for i in range(grid.n):
        g[i, i] = scale
    return g


# ---------------------------------------------------------------------------
# finite differences

def _diff_shift(f: np.ndarray, ax: int, s: int) -> np.ndarray:
    """f[i+s] - f[i-s] along axis ``ax`` with periodic wrap."""
    N = f.shape[ax]
    pre = (slice(None),) * ax
    out = np.empty_like(f)
    out[pre + (slice(s, N - s),)] = f[pre + (slice(2 * s, N),)] - f[pre + (slice(0, N - 2 * s),)]
    for i in list(range(s)) + list(range(N - s, N)):
        ip, im = (i + s) % N, (i - s) % N
        out[pre + (slice(i, i + 1),)] = f[pre + (slice(ip, ip + 1),)] - f[pre + (slice(im, im + 1),)]
    return out


def partial(f: np.ndarray, axis: int, grid: Grid, order: int = 2) -> np.ndarray:
    """Centered periodic difference along spatial ``axis`` (0-based).

    Leading component axes are carried along; the grid axes are the last
    ``grid.n`` axes of ``f``.
    """
    ax = f.ndim - grid.n + axis
    if order == 2:
        out = _diff_shift(f, ax, 1)
        out *= 1.0 / (2.0 * grid.h)
    elif order == 4:
        out = _diff_shift(f, ax, 1)
        out *= 8.0
        out -= _diff_shift(f, ax, 2)
        out *= 1.0 / (12.0 * grid.h)
    else:
        raise ValueError(f"difference order must be 2 or 4, got {order}")
    return out


def gradient(f: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """Stack of partials, derivative index first: out[k, ...] = d_k f."""
    return np.stack([partial(f, a, grid, order) for a in range(grid.n)])


def sym_gradient(T: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """dT[k, i, j] = d_k T_ij for a symmetric tensor, differentiating each
    independent component once."""
    n = grid.n
    P = pack_sym(T)
    return np.stack([unpack_sym(partial(P, a, grid, order), n) for a in range(n)])


def hessian_flat(f: np.ndarray, grid: Grid, order: int = 2, df: np.ndarray | None = None) -> np.ndarray:
    """Second partials d_i d_j f by composing first differences, symmetric fill."""
    n = grid.n
    if df is None:
        df = gradient(f, grid, order)
    out = np.empty((n, n) + f.shape)
    for i in range(n):
        for j in range(i, n):
            out[i, j] = partial(df[j], i, grid, order)
            out[j, i] = out[i, j]
    return out


# ---------------------------------------------------------------------------
# pointwise linear algebra

def min_eigenvalue(g: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of a symmetric matrix field (closed form for n <= 3)."""
    n = g.shape[0]
    if n == 2:
        a, b, c = g[0, 0], g[0, 1], g[1, 1]
        return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    if n == 3:
        a11, a22, a33 = g[0, 0], g[1, 1], g[2, 2]
        a12, a13, a23 = g[0, 1], g[0, 2], g[1, 2]
        q = (a11 + a22 + a33) / 3.0
        p1 = a12 * a12 + a13 * a13 + a23 * a23
        b11, b22, b33 = a11 - q, a22 - q, a33 - q
        p2 = b11 * b11 + b22 * b22 + b33 * b33 + 2.0 * p1
        p = np.sqrt(p2 / 6.0)
        iso = p <= 1e-300
        ps = np.where(iso, 1.0, p)
        # normalize before the determinant; p**3 underflows for near-isotropic points
        b11, b22, b33 = b11 / ps, b22 / ps, b33 / ps
        c12, c13, c23 = a12 / ps, a13 / ps, a23 / ps
        det = (b11 * (b22 * b33 - c23 * c23) - c12 * (c12 * b33 - c23 * c13)
               + c13 * (c12 * c23 - b22 * c13))
        r = np.clip(0.5 * det, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        lam = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
        return np.where(iso, q, lam)
    moved = np.moveaxis(g, (0, 1), (-2, -1))
    return np.linalg.eigvalsh(moved)[..., 0]


def spd_check(g: np.ndarray) -> np.ndarray:
    """Raise DegenerateMetric unless every eigenvalue exceeds EPS_SPD * max diag."""
    n = g.shape[0]
    lam = min_eigenvalue(g)
    diag_max = np.max(np.stack([g[i, i] for i in range(n)]), axis=0)
    bad = ~(lam > EPS_SPD * diag_max)
    if np.any(bad):
        margin = np.where(np.isfinite(lam), lam - EPS_SPD * diag_max, -np.inf)
        idx = np.unravel_index(int(np.argmin(margin)), lam.shape)
        raise DegenerateMetric(idx, lam[idx])
    return lam


def invert_metric(g: np.ndarray, check: bool = True) -> np.ndarray:
    """Pointwise inverse g^{ij}; raises DegenerateMetric if g is not SPD."""
    n = g.shape[0]
    if check:
        spd_check(g)
    if n == 2:
        a, b, c = g[0, 0], g[0, 1], g[1, 1]
        det = a * c - b * b
        inv = np.empty_like(g)
        inv[0, 0] = c / det
        inv[1, 1] = a / det
        inv[0, 1] = -b / det
        inv[1, 0] = inv[0, 1]
        return inv
    if n == 3:
        a, b, c = g[0, 0], g[0, 1], g[0, 2]
        d, e, f = g[1, 1], g[1, 2], g[2, 2]
        c00 = d * f - e * e
        c01 = c * e - b * f
        c02 = b * e - c * d
        det = a * c00 + b * c01 + c * c02
        inv = np.empty_like(g)
        inv[0, 0] = c00 / det
        inv[0, 1] = c01 / det
        inv[0, 2] = c02 / det
        inv[1, 1] = (a * f - c * c) / det
        inv[1, 2] = (b * c - a * e) / det
        inv[2, 2] = (a * d - b * b) / det
        for i, j in ((0, 1), (0, 2), (1, 2)):
            inv[j, i] = inv[i, j]
        return inv
    moved = np.moveaxis(g, (0, 1), (-2, -1))
    return symmetrize(np.moveaxis(np.linalg.inv(moved), (-2, -1), (0, 1)))


def det_field(g: np.ndarray) -> np.ndarray:
    n = g.shape[0]
    if n == 2:
        return g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if n == 3:
        return (g[0, 0] * (g[1, 1] * g[2, 2] - g[1, 2] ** 2)
                - g[0, 1] * (g[0, 1] * g[2, 2] - g[1, 2] * g[0, 2])
                + g[0, 2] * (g[0, 1] * g[1, 2] - g[1, 1] * g[0, 2]))
    return np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1)))


def cholesky_field(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix field, a = L L^T."""
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        s = a[j, j] - sum(L[j, k] ** 2 for k in range(j))
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - sum(L[i, k] * L[j, k] for k in range(j))) / L[j, j]
    return L


def norm_sq(T: np.ndarray, gi: np.ndarray) -> np.ndarray:
    """g^{ik} g^{jl} T_ij T_kl, evaluated as a sum of squares so it is >= 0."""
    C = cholesky_field(gi)
    M = np.einsum("ia...,ij...,jb...->ab...", C, T, C)
    return np.sum(M * M, axis=(0, 1))


def mixed(T: np.ndarray, gi: np.ndarray) -> np.ndarray:
    """The mixed matrix G_i^k = T_ij g^{jk}."""
    return np.einsum("ij...,jk...->ik...", T, gi)


# ---------------------------------------------------------------------------
# connection and curvature

def _flat(a: np.ndarray, ncomp: int) -> np.ndarray:
    """View with the grid axes collapsed into one trailing axis."""
    return np.ascontiguousarray(a).reshape(a.shape[:ncomp] + (-1,))


def christoffel_from(gi: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Gamma^k_ij = 1/2 g^{km}(d_i g_mj + d_j g_mi - d_m g_ij)."""
    n = gi.shape[0]
    out = np.empty((n, n, n) + gi.shape[2:])
    _kernels.christoffel(_flat(gi, 2), _flat(dg, 3), out.reshape((n, n, n, -1)))
    return out


def christoffel(g: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    gi = invert_metric(g)
    return christoffel_from(gi, sym_gradient(g, grid, order))


def contract_christoffel(gi: np.ndarray, gam: np.ndarray) -> np.ndarray:
    """Gamma^k = g^{ij} Gamma^k_ij."""
    return np.einsum("ij...,kij...->k...", gi, gam)


def contracted_christoffel(g: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    gi = invert_metric(g)
    return contract_christoffel(gi, christoffel_from(gi, sym_gradient(g, grid, order)))


def ricci_from(gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """Ricci tensor R_ik = d_l G^l_ki - d_k G^l_li + G^l_lm G^m_ki - G^l_km G^m_li.

    Only the d_k G^l_li term is not symmetric on the grid; it enters through
    its symmetric part, which is what the full Riemann contraction yields
    after symmetrization.
    """
    n = grid.n
    gp = np.stack([pack_sym(gam[l]) for l in range(n)])
    div = partial(gp[0], 0, grid, order)
    for l in range(1, n):
        div += partial(gp[l], l, grid, order)
    c = np.stack([sum(gam[l, l, i] for l in range(n)) for i in range(n)])
    dc = gradient(c, grid, order)  # dc[k, i] = d_k c_i
    ric = np.empty((n, n) + grid.shape)
    _kernels.ricci(_flat(div, 1), _flat(dc, 2), _flat(c, 1), _flat(gam, 3), ric.reshape((n, n, -1)))
    return ric


def riemann_from(g: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """Fully lowered R_ijkl = -g_jp R^p_ikl with
    R^p_ikl = d_k G^p_li - d_l G^p_ki + G^p_km G^m_li - G^p_lm G^m_ki.

    Antisymmetry in (k, l) is exact; the other symmetries hold to
    truncation error.
    """
    dgam = gradient(gam, grid, order)  # dgam[k, p, l, i]
    A = np.einsum("kpli...->pikl...", dgam) + np.einsum("pkm...,mli...->pikl...", gam, gam)
    Rup = A - A.swapaxes(2, 3)
    return -np.einsum("jp...,pikl...->ijkl...", g, Rup)


def trace_sym(T: np.ndarray, gi: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,ij...->...", gi, T)


@dataclass
class CurvatureBundle:
    inverse: np.ndarray
    christoffel: np.ndarray
    contracted: np.ndarray
    riemann: np.ndarray | None
    ricci: np.ndarray
    scalar: np.ndarray
    ricci_norm_sq: np.ndarray


def curvature(g: np.ndarray, grid: Grid, order: int = 2, with_riemann: bool = True) -> CurvatureBundle:
    """All curvature quantities of one metric snapshot."""
    gi = invert_metric(g)
    gam = christoffel_from(gi, sym_gradient(g, grid, order))
    ric = ricci_from(gam, grid, order)
    riem = riemann_from(g, gam, grid, order) if with_riemann else None
    return CurvatureBundle(
        inverse=gi,
        christoffel=gam,
        contracted=contract_christoffel(gi, gam),
        riemann=riem,
        ricci=ric,
        scalar=trace_sym(ric, gi),
        ricci_norm_sq=norm_sq(ric, gi),
    )


def ricci_contraction(riem: np.ndarray, gi: np.ndarray) -> np.ndarray:
    """g^{jl} R_ijkl (not symmetrized)."""
    return np.einsum("jl...,ijkl...->ik...", gi, riem)


def ricci_via_expansion(g: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """Ricci tensor assembled from the harmonic-coordinate expansion

        2R_ij = -g^{kl} d_k d_l g_ij + (g_ik d_j G^k + g_jk d_i G^k)
                + 2 g^{kl} g_pq G^p_ik G^q_jl + d_k g_ij G^k
                + (g_ik G^k_rs g^{pr} g^{qs} d_j g_pq + (i <-> j)),

    with G^k the contracted Christoffel symbol.  It shares no code path with
    ``ricci_from`` beyond the Christoffel symbols.
    """
    n = grid.n
    gi = invert_metric(g)
    dg = sym_gradient(g, grid, order)
    gam = christoffel_from(gi, dg)
    gk = contract_christoffel(gi, gam)
    dgk = gradient(gk, grid, order)  # dgk[j, k] = d_j G^k
    gam_low = np.einsum("qp...,pjl...->qjl...", g, gam)
    gam_up = np.einsum("krs...,pr...,qs...->kpq...", gam, gi, gi)
    X = np.einsum("kpq...,jpq...->kj...", gam_up, dg)  # X^k_j
    S = np.einsum("ik...,kj...->ij...", g, X)
    quad = np.einsum("kl...,pik...,pjl...->ij...", gi, gam, gam_low)
    out = np.empty((n, n) + grid.shape)
    P = pack_sym(g)
    for a, (i, j) in enumerate(sym_pairs(n)):
        val = S[i, j] + S[j, i] + 2.0 * quad[i, j]
        for k in range(n):
            dk = partial(P[a], k, grid, order)
            for l in range(n):
                val -= gi[k, l] * partial(dk, l, grid, order)
            val += g[i, k] * dgk[j, k] + g[j, k] * dgk[i, k] + dg[k, i, j] * gk[k]
        out[i, j] = 0.5 * val
        out[j, i] = out[i, j]
    return out


# ---------------------------------------------------------------------------
# covariant derivatives

def cov_deriv_sym(T: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """DT[a, b, c] = nabla_a T_bc."""
    n = grid.n
    dT = sym_gradient(T, grid, order)
    out = np.empty_like(dT)
    for a in range(n):
        for b, c in sym_pairs(n):
            acc = dT[a, b, c]
            for e in range(n):
                acc = acc - gam[e, a, b] * T[e, c] - gam[e, a, c] * T[b, e]
            out[a, b, c] = acc
            out[a, c, b] = acc
    return out


def cov_deriv_vector(V: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """DV[a, k] = nabla_a V^k = d_a V^k + G^k_am V^m."""
    return gradient(V, grid, order) + np.einsum("kam...,m...->ak...", gam, V)


def cov_deriv_mixed(M: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """For M[j, p] = M_j^p: out[k, j, p] = nabla_k M_j^p."""
    return (gradient(M, grid, order)
            + np.einsum("pkm...,jm...->kjp...", gam, M)
            - np.einsum("mkj...,mp...->kjp...", gam, M))


def hessian(f: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """nabla_i nabla_j f, exactly symmetric."""
    df = gradient(f, grid, order)
    H = hessian_flat(f, grid, order, df)
    return H - np.einsum("kij...,k...->ij...", gam, df)


def laplace_beltrami(f: np.ndarray, gi: np.ndarray, gam: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    return trace_sym(hessian(f, gam, grid, order), gi)


def sqrt_det(g: np.ndarray) -> np.ndarray:
    return np.sqrt(det_field(g))


def divergence_flux(X: np.ndarray, g: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """(1/sqrt g) d_k (sqrt g X^k); its sqrt(g)-weighted sum telescopes to zero."""
    sg = sqrt_det(g)
    acc = partial(sg * X[0], 0, grid, order)
    for k in range(1, grid.n):
        acc += partial(sg * X[k], k, grid, order)
    return acc / sg


def integrate_volume(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    """Periodic trapezoidal rule with the metric volume element."""
    return grid.integrate(f * sqrt_det(g))
