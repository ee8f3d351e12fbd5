"""Harmonic-coordinate reduction and the first-order symmetric hyperbolic form.

Where the contracted Christoffel symbol G^k vanishes the flow reads

    d^2 g_ij/dt^2 = g^{kl} d_k d_l g_ij + Ht_ij,

    Ht_ij = -2 g^{kl} g_pq G^p_ik G^q_jl
            - (g_ik G^k_rs g^{pr} g^{qs} d_j g_pq + (i <-> j)) + velocity terms.

With unknowns U = (g_ij; g_ij,k; h_ij), each block packed as an upper
triangle of length m = n(n+1)/2, this becomes A0 dU/dt = A^j d_j U + B.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .flow import CoefficientSet, FlowParams, FlowState, general_G
from .geometry import Grid


def system_size(n: int) -> int:
    return n * (n + 1) * (n + 2) // 2


def _m(n: int) -> int:
    return n * (n + 1) // 2


# ---------------------------------------------------------------------------
# first-order vector

def assemble_state(state: FlowState, grid: Grid, order: int = 2) -> np.ndarray:
    """U[:, *grid] = (g packed; d_1 g packed; ...; d_n g packed; k packed)."""
    geo.spd_check(state.g)
    gP = geo.pack_sym(state.g)
    blocks = [gP] + [geo.partial(gP, a, grid, order) for a in range(grid.n)] + [geo.pack_sym(state.k)]
    return np.concatenate(blocks, axis=0)


def split_vector(U: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (g, dg, h) as dense tensors with dg[k, i, j] = g_ij,k."""
    m = _m(n)
    g = geo.unpack_sym(U[:m], n)
    dg = np.stack([geo.unpack_sym(U[m * (1 + a): m * (2 + a)], n) for a in range(n)])
    h = geo.unpack_sym(U[m * (n + 1): m * (n + 2)], n)
    return g, dg, h


# ---------------------------------------------------------------------------
# source term and gauge-fixed RHS

def htilde_from(g: np.ndarray, gi: np.ndarray, dg: np.ndarray, k: np.ndarray, params: FlowParams) -> np.ndarray:
    n = g.shape[0]
    gam = geo.christoffel_from(gi, dg)
    gam_low = np.einsum("qp...,pjl...->qjl...", g, gam)
    quad = np.einsum("kl...,pik...,pjl...->ij...", gi, gam, gam_low)
    gam_up = np.einsum("krs...,pr...,qs...->kpq...", gam, gi, gi)
    X = np.einsum("kpq...,jpq...->kj...", gam_up, dg)
    S = np.einsum("ik...,kj...->ij...", g, X)
    G = general_G(g, k, CoefficientSet.dissipative(params), gi)
    out = np.empty_like(g)
    for i, j in geo.sym_pairs(n):
        out[i, j] = -2.0 * quad[i, j] - (S[i, j] + S[j, i]) + G[i, j]
        out[j, i] = out[i, j]
    return out


def source_Htilde(state: FlowState, params: FlowParams, grid: Grid, order: int = 2) -> np.ndarray:
    gi = geo.invert_metric(state.g)
    return htilde_from(state.g, gi, geo.sym_gradient(state.g, grid, order), state.k, params)


def principal_part(gi: np.ndarray, dg: np.ndarray, grid: Grid, order: int = 2) -> np.ndarray:
    """g^{kl} d_l (g_ij,k), with the inner derivative supplied in ``dg``."""
    n = grid.n
    m = _m(n)
    dgP = np.stack([geo.pack_sym(dg[a]) for a in range(n)])
    acc = np.zeros((m,) + grid.shape)
    for k in range(n):
        for l in range(n):
            acc += gi[k, l] * geo.partial(dgP[k], l, grid, order)
    return geo.unpack_sym(acc, n)


def gauge_fixed_rhs(state: FlowState, params: FlowParams, grid: Grid, order: int = 2) -> np.ndarray:
    """g^{kl} d_k d_l g_ij + Ht_ij."""
    gi = geo.invert_metric(state.g)
    dg = geo.sym_gradient(state.g, grid, order)
    return principal_part(gi, dg, grid, order) + htilde_from(state.g, gi, dg, state.k, params)


def first_order_rhs(U: np.ndarray, params: FlowParams, grid: Grid, order: int = 2) -> np.ndarray:
    """dU/dt = A0^{-1} (A^j d_j U + B), using the block form of A0.

    The spatial-block rows read g^{kl} d_t g_ij,k = g^{jl} d_j h_ij; the
    inverse of the middle block is g_kl (x) I.
    """
    n = grid.n
    m = _m(n)
    g, dg, h = split_vector(U, n)
    geo.spd_check(g)
    gi = geo.invert_metric(g, check=False)
    hP = geo.pack_sym(h)
    dh = [geo.partial(hP, j, grid, order) for j in range(n)]
    # A^j d_j U restricted to the spatial rows: row l gets sum_j g^{jl} d_j h
    rows = [sum(gi[j, l] * dh[j] for j in range(n)) for l in range(n)]
    spatial = [sum(g[k, l] * rows[l] for l in range(n)) for k in range(n)]
    hdot = principal_part(gi, dg, grid, order) + htilde_from(g, gi, dg, h, params)
    return np.concatenate([hP] + spatial + [geo.pack_sym(hdot)], axis=0)


# ---------------------------------------------------------------------------
# pointwise coefficient matrices

@dataclass
class SystemMatrices:
    A0: np.ndarray
    A: list
    B: np.ndarray | None = None


def assemble_matrices(g: np.ndarray, h: np.ndarray | None = None, Ht: np.ndarray | None = None,
                      check: bool = True) -> SystemMatrices:
    """Dense A0, A^j (and B if h, Ht are given) at one point; g is n x n.

    ``check=False`` skips the SPD guard so that violations can be built on
    purpose and handed to ``verify_symmetric_hyperbolic``.
    """
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    if check:
        geo.spd_check(g.reshape(n, n, 1))
    m = _m(n)
    size = system_size(n)
    gi = np.linalg.inv(g)
    gi = 0.5 * (gi + gi.T)
    I = np.eye(m)
    A0 = np.zeros((size, size))
    A0[:m, :m] = I
    A0[m * (n + 1):, m * (n + 1):] = I
    for k in range(n):
        for l in range(n):
            A0[m * (1 + k): m * (2 + k), m * (1 + l): m * (2 + l)] = gi[k, l] * I
    A = []
    hb = slice(m * (n + 1), m * (n + 2))
    for j in range(n):
        Aj = np.zeros((size, size))
        for k in range(n):
            blk = slice(m * (1 + k), m * (2 + k))
            Aj[blk, hb] = gi[j, k] * I
            Aj[hb, blk] = gi[k, j] * I
        A.append(Aj)
    B = None
    if h is not None and Ht is not None:
        B = np.concatenate([geo.pack_sym(np.asarray(h)), np.zeros(n * m), geo.pack_sym(np.asarray(Ht))])
    return SystemMatrices(A0, A, B)


@dataclass
class HyperbolicityReport:
    passed: bool
    min_eigenvalue: float
    violations: list = field(default_factory=list)


def verify_symmetric_hyperbolic(mats: SystemMatrices) -> HyperbolicityReport:
    viol = []
    if not np.array_equal(mats.A0, mats.A0.T):
        viol.append(("A0", "not symmetric"))
    for j, Aj in enumerate(mats.A):
        if not np.array_equal(Aj, Aj.T):
            viol.append((f"A{j + 1}", "not symmetric"))
    lam = float(np.linalg.eigvalsh(mats.A0)[0])
    if not lam > 0:
        viol.append(("A0", f"eigenvalue {lam:.6g} <= 0"))
    return HyperbolicityReport(not viol, lam, viol)


def harmonic_constraint_monitor(g: np.ndarray, grid: Grid, order: int = 2) -> tuple[float, float]:
    """(sup norm, flat L2 norm) of the contracted Christoffel symbol."""
    gk = geo.contracted_christoffel(g, grid, order)
    return float(np.max(np.abs(gk))), float(np.sqrt(grid.integrate(np.sum(gk * gk, axis=0))))
