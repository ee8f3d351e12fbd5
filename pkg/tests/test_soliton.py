import numpy as np
import pytest
import sympy as sp

from conftest import conformal_metric, sample
from hypflow import geometry as geo
from hypflow import soliton as sol
from hypflow.errors import DegenerateMetric
from oracles import X, flat_gradient_soliton, flat_lie_derivative_metric, flat_vector_soliton


def smooth_potential(grid, rng, modes=3, amp=0.2):
    Xs = grid.coords()
    f = np.zeros(grid.shape)
    for _ in range(modes):
        kvec = rng.integers(-2, 3, size=grid.n)
        phase = rng.uniform(0, 2 * np.pi)
        f += amp * rng.uniform(-1, 1) * np.sin(sum(int(k) * x for k, x in zip(kvec, Xs)) + phase)
    return f


def bumpy_metric(grid, rng):
    Xs = grid.coords()
    g = conformal_metric(grid, 0.1)
    g[0, 1] = g[1, 0] = 0.05 * rng.uniform(-1, 1) * np.sin(Xs[-1] + rng.uniform(0, 6))
    return g


def test_candidate_validation():
    grid = geo.Grid(2, 8)
    g = geo.identity_field(grid)
    f = np.zeros(grid.shape)
    with pytest.raises(ValueError):
        sol.SolitonCandidate(g, 1.0)
    with pytest.raises(ValueError):
        sol.SolitonCandidate(g, 1.0, V=np.zeros((2,) + grid.shape), f=f)
    with pytest.raises(ValueError):
        sol.SolitonCandidate(g, 0.0, f=f)
    with pytest.raises(DegenerateMetric):
        sol.SolitonCandidate(-g, 1.0, f=f)


# ---------------------------------------------------------------------------
# Lie derivatives

def test_lie_derivative_forms_agree(rng):
    grid = geo.Grid(3, 16)
    g = bumpy_metric(grid, rng)
    V = np.stack([smooth_potential(grid, rng) for _ in range(3)])
    a = sol.lie_derivative(g, V, grid)
    b = sol.lie_derivative_metric(g, V, grid)
    assert np.max(np.abs(a - b)) < 1e-13


def test_lie_derivative_flat_oracle():
    V = [0.3 * sp.sin(X[1]), 0.2 * sp.cos(X[0] + X[1])]
    ref = flat_lie_derivative_metric(2, V)
    for order, tol in ((2, 0.01), (4, 1e-4)):
        grid = geo.Grid(2, 32)
        Vn = np.stack([sample(sp.lambdify(X[:2], v, "numpy"), grid) * np.ones(grid.shape) for v in V])
        L = sol.lie_derivative_metric(geo.identity_field(grid), Vn, grid, order)
        assert max(np.max(np.abs(L[i, j] - sample(ref[(i, j)], grid))) for i in range(2) for j in range(2)) < tol


def test_second_lie_matches_iterated(rng):
    errs = []
    for N in (16, 32, 64):
        grid = geo.Grid(2, N)
        g = conformal_metric(grid, 0.1)
        X0, X1 = grid.coords()
        V = np.stack([0.2 * np.sin(X1), 0.1 * np.cos(X0)])
        a = sol.second_lie(g, V, grid)
        b = sol.lie_derivative(sol.lie_derivative(g, V, grid), V, grid)
        errs.append(np.max(np.abs(a - b)))
    assert 3.2 < errs[0] / errs[1] < 4.8 and 3.2 < errs[1] / errs[2] < 4.8


def test_killing_field_has_zero_lie_derivative():
    grid = geo.Grid(3, 8)
    V = np.zeros((3,) + grid.shape)
    V[1] = 0.7
    assert np.max(np.abs(sol.lie_derivative_metric(geo.identity_field(grid), V, grid))) == 0.0


# ---------------------------------------------------------------------------
# residuals against symbolic oracles

@pytest.mark.parametrize("n", [2, 3])
def test_gradient_residual_flat_oracle(n):
    f = sp.Rational(1, 5) * sp.sin(X[0]) * sp.cos(X[1]) + sp.Rational(1, 10) * sp.cos(X[n - 1])
    res, tr = flat_gradient_soliton(n, f, sp.Rational(3, 2))
    fn = sp.lambdify(X[:n], f, "numpy")
    errs, terrs = [], []
    for N in (16, 32) if n == 3 else (32, 64):
        grid = geo.Grid(n, N)
        c = sol.SolitonCandidate(geo.identity_field(grid), 1.5, f=sample(fn, grid))
        r = sol.gradient_soliton_residual(c, grid)
        errs.append(max(np.max(np.abs(r[i, j] - sample(res[(i, j)], grid))) for i in range(n) for j in range(n)))
        terrs.append(np.max(np.abs(sol.trace_residual(c, grid) - sample(tr, grid))))
    assert 3.2 < errs[0] / errs[1] < 4.8
    assert 3.2 < terrs[0] / terrs[1] < 4.8


def test_vector_residual_flat_oracle():
    V = [sp.Rational(1, 5) * sp.sin(X[1]), sp.Rational(1, 10) * sp.cos(X[0] + X[1])]
    res = flat_vector_soliton(2, V, 1)
    errs = []
    for N in (32, 64):
        grid = geo.Grid(2, N)
        Vn = np.stack([sample(sp.lambdify(X[:2], v, "numpy"), grid) * np.ones(grid.shape) for v in V])
        r = sol.soliton_residual(sol.SolitonCandidate(geo.identity_field(grid), 1.0, V=Vn), grid)
        errs.append(max(np.max(np.abs(r[i, j] - sample(res[(i, j)], grid))) for i in range(2) for j in range(2)))
    assert 3.2 < errs[0] / errs[1] < 4.8


def test_vector_form_is_twice_gradient_form(rng):
    """With V = grad f the vector-field equation is twice the gradient one."""
    errs = []
    for N in (16, 32):
        grid = geo.Grid(3, N)
        g = conformal_metric(grid, 0.1)
        f = 0.2 * np.sin(grid.coords()[0]) * np.cos(grid.coords()[2])
        gi = geo.invert_metric(g)
        V = np.einsum("kl...,l...->k...", gi, geo.gradient(f, grid))
        rv = sol.soliton_residual(sol.SolitonCandidate(g, 1.0, V=V), grid)
        rg = sol.gradient_soliton_residual(sol.SolitonCandidate(g, 1.0, f=f), grid)
        errs.append(np.max(np.abs(rv - 2.0 * rg)))
    assert errs[1] < errs[0] / 3.0


@pytest.mark.parametrize("n", [2, 3])
def test_trace_relation_exact(rng, n):
    grid = geo.Grid(n, 16)
    for _ in range(3):
        g = bumpy_metric(grid, rng)
        c = sol.SolitonCandidate(g, rng.uniform(0.5, 2), f=smooth_potential(grid, rng))
        gi = geo.invert_metric(g)
        tr = geo.trace_sym(sol.gradient_soliton_residual(c, grid), gi)
        ref = sol.trace_residual(c, grid)
        assert np.max(np.abs(tr - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_residual_needs_matching_data():
    grid = geo.Grid(2, 8)
    c = sol.SolitonCandidate(geo.identity_field(grid), 1.0, f=np.zeros(grid.shape))
    with pytest.raises(ValueError):
        sol.soliton_residual(c, grid)
    cv = sol.SolitonCandidate(geo.identity_field(grid), 1.0, V=np.zeros((2,) + grid.shape))
    with pytest.raises(ValueError):
        sol.gradient_soliton_residual(cv, grid)


# ---------------------------------------------------------------------------
# certificate

def test_constant_potential_flat_passes():
    grid = geo.Grid(3, 16)
    c = sol.SolitonCandidate(geo.identity_field(grid), 1.0, f=np.full(grid.shape, 2.0))
    rep = sol.nonexistence_certificate(c, grid)
    assert np.max(np.abs(rep.gradient_residual)) == 0.0
    assert rep.is_soliton and rep.passed and rep.implication_holds
    assert rep.hessian_norm_sq == 0.0 and rep.tolerance == 1e-8


def test_certificate_non_soliton(rng):
    grid = geo.Grid(3, 32)
    c = sol.SolitonCandidate(conformal_metric(grid, 0.1), 1.0, f=smooth_potential(grid, rng))
    rep = sol.nonexistence_certificate(c, grid)
    assert not rep.is_soliton
    assert rep.passed
    assert abs(rep.divergence_integral) < 1e-12 and abs(rep.laplacian_integral) < 1e-12
    assert rep.quadratic_integral >= 0
    d = rep.to_dict()
    assert set(d) >= {"r0", "quadratic_integral", "trace_residual_sup", "passed"}


def test_integrated_trace_balance(rng):
    """vol * r0 + Q + int d Lap f = int trace residual, with both divergences integrating to zero."""
    grid = geo.Grid(3, 24)
    g = bumpy_metric(grid, rng)
    c = sol.SolitonCandidate(g, 1.3, f=smooth_potential(grid, rng))
    rep = sol.nonexistence_certificate(c, grid)
    vol = geo.integrate_volume(np.ones(grid.shape), g, grid)
    lhs = vol * rep.r0 + rep.quadratic_integral
    rhs = geo.integrate_volume(rep.trace_residual, g, grid)
    assert lhs == pytest.approx(rhs, rel=0.05, abs=1e-3)


def test_Q_nonnegative_three_dimensions(rng):
    grid = geo.Grid(3, 12)
    for _ in range(10):
        c = sol.SolitonCandidate(bumpy_metric(grid, rng), 1.0, f=smooth_potential(grid, rng))
        assert sol.nonexistence_certificate(c, grid).quadratic_integral >= 0


# ---------------------------------------------------------------------------
# candidates from dicts

def test_candidate_from_dict():
    grid = geo.Grid(2, 16)
    c = sol.candidate_from_dict({"f": {"kind": "constant", "value": 1.5}}, grid)
    assert np.all(c.f == 1.5) and np.array_equal(c.g, geo.identity_field(grid))
    c = sol.candidate_from_dict({"metric": {"kind": "conformal", "amplitude": 0.1, "axis": 1},
                                 "d": 2.0, "V": [0.5, {"amplitude": 0.2, "axis": 0, "mode": 2}]}, grid)
    assert c.d == 2.0 and np.all(c.V[0] == 0.5)
    X0, _ = grid.coords()
    assert np.allclose(c.V[1], 0.2 * np.sin(4 * np.pi * X0 / grid.L))
    for bad in ({"V": [1.0]}, {}, {"metric": {"kind": "round"}, "f": {}}, {"f": {"axis": 5}}):
        with pytest.raises(ValueError):
            sol.candidate_from_dict(bad, grid)
