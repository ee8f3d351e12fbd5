"""Fused pointwise kernels for the hot path.

Arrays arrive with the grid flattened into the last axis.  Work is split
into fixed blocks of grid points; inside a block the component loops are
outermost and the point loop innermost, so it vectorizes.  Each output
value is produced by exactly one block with a fixed operation order, so
results do not depend on the number of threads.
"""

from __future__ import annotations

import numpy as np
import numba
from numba import njit, prange

BLOCK = 2048


def set_threads(count: int) -> int:
    """Clamp ``count`` to the available pool and activate it; returns the count used."""
    used = max(1, min(int(count), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(used)
    return used


def get_threads() -> int:
    return numba.get_num_threads()


@njit(parallel=True, cache=True)
def christoffel(gi, dg, out):
    n = gi.shape[0]
    P = gi.shape[2]
    nb = (P + BLOCK - 1) // BLOCK
    for b in prange(nb):
        lo = b * BLOCK
        hi = min(P, lo + BLOCK)
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    for p in range(lo, hi):
                        out[k, i, j, p] = 0.0
                    for m in range(n):
                        for p in range(lo, hi):
                            out[k, i, j, p] += gi[k, m, p] * (0.5 * (dg[i, m, j, p] + dg[j, m, i, p] - dg[m, i, j, p]))
                    if j > i:
                        for p in range(lo, hi):
                            out[k, j, i, p] = out[k, i, j, p]


@njit(parallel=True, cache=True)
def ricci(div, dc, c, gam, out):
    n = gam.shape[0]
    P = gam.shape[3]
    nb = (P + BLOCK - 1) // BLOCK
    for b in prange(nb):
        lo = b * BLOCK
        hi = min(P, lo + BLOCK)
        a = 0
        for i in range(n):
            for k in range(i, n):
                for p in range(lo, hi):
                    out[i, k, p] = div[a, p] - 0.5 * (dc[k, i, p] + dc[i, k, p])
                for m in range(n):
                    for p in range(lo, hi):
                        out[i, k, p] += c[m, p] * gam[m, k, i, p]
                for l in range(n):
                    for m in range(n):
                        for p in range(lo, hi):
                            out[i, k, p] -= gam[l, k, m, p] * gam[m, l, i, p]
                if k > i:
                    for p in range(lo, hi):
                        out[k, i, p] = out[i, k, p]
                a += 1


@njit(parallel=True, cache=True)
def general_g(g, gi, k, ca, cb, cd, ce, cf, ch, out):
    n = g.shape[0]
    P = g.shape[2]
    nb = (P + BLOCK - 1) // BLOCK
    for b in prange(nb):
        lo = b * BLOCK
        hi = min(P, lo + BLOCK)
        B = hi - lo
        kg = np.zeros((n, n, B))  # kg[i, q] = k_ir g^{rq}
        for i in range(n):
            for q in range(n):
                for r in range(n):
                    for p in range(B):
                        kg[i, q, p] += k[i, r, lo + p] * gi[r, q, lo + p]
        u = np.zeros(B)
        v = np.zeros(B)
        for i in range(n):
            for p in range(B):
                u[p] += kg[i, i, p]
            for j in range(n):
                for p in range(B):
                    v[p] += kg[i, j, p] * kg[j, i, p]
        for i in range(n):
            for j in range(i, n):
                for p in range(B):
                    acc = 0.0
                    for q in range(n):
                        acc += kg[i, q, p] * k[j, q, lo + p]
                    s = ce * u[p] + cf * u[p] * u[p] - ch * v[p]
                    val = ca * acc + (cb * u[p] + cd) * k[i, j, lo + p] + s * g[i, j, lo + p]
                    out[i, j, lo + p] = val
                    out[j, i, lo + p] = val
