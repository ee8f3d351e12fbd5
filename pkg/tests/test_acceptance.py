"""Acceptance criteria, one test each.

Every test prints a single ``criterion N PASS|FAIL: ...`` line (also
repeated in the terminal summary) and asserts at the stated tolerance.
Reference values come from the oracles in ``oracles.py`` or from closed
forms evaluated here; none is taken from hypflow itself.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, conformal_metric
from hypflow import _kernels
from hypflow import dynamics as dy
from hypflow import exact_scale as es
from hypflow import geometry as geo
from hypflow import reduction as red
from hypflow import soliton as sol
from hypflow.flow import (FlowParams, FlowState, dissipative_rhs, scalar_wave_residual, u_evolution_residual,
                          v_evolution_residual)

CF = es.ScaleVariant.CLOSED_FORM
SUB = es.ScaleVariant.SUBSTITUTION

# root of 3 - 2t - 2exp(-t) (mpmath.findroot, 50 digits, rounded to double)
SHRINK_T_110 = 1.198290437315664

# determinism bookkeeping for criterion 11: run id -> {threads: csv bytes}
CSVS: dict = {}


def verdict(number: int, ok: bool, detail: str, capsys) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def csv_bytes(result, tmp_path_factory) -> bytes:
    path = tmp_path_factory.mktemp("csv") / "diagnostics.csv"
    dy.write_csv(result.records, path)
    return path.read_bytes()


def with_threads(count: int, fn):
    before = _kernels.get_threads()
    _kernels.set_threads(count)
    try:
        return fn()
    finally:
        _kernels.set_threads(before)


# ---------------------------------------------------------------------------
# run definitions shared with the determinism check

def config_3() -> dy.RunConfig:
    return dy.RunConfig(dimension=3, points_per_axis=32, t_end=5.0)


def config_4(n: int) -> dy.RunConfig:
    return dy.RunConfig(dimension=n, points_per_axis=16, t_end=1.0, dt=1e-2,
                        initial_data={"kind": "homothetic", "mu": 0.1}, experiment="homothetic")


def config_9(d: float = 1.0) -> dy.RunConfig:
    return dy.RunConfig(dimension=3, points_per_axis=96, box_length=40.0, d=d, t_end=10.0,
                        diagnostics_every=5, experiment="stability",
                        initial_data={"kind": "perturbation", "epsilon": 1e-3})


# ---------------------------------------------------------------------------

def test_criterion_01_exact_solution(capsys):
    t0 = time.perf_counter()
    p = es.ScaleProblem(1.0, 0.0, 1.0)
    solution = es.integrate_scale(p, CF, 1e-3, 1.0)
    err = float(np.max(np.abs(solution.rho - (3 - 2 * solution.t - 2 * np.exp(-solution.t)))))
    fate = es.classify_fate(p, CF)
    T_err = abs(fate.T - SHRINK_T_110)
    wall = time.perf_counter() - t0
    ok = err <= 1e-8 and fate.kind is es.FateKind.FINITE_TIME and T_err <= 1e-6 and wall < 1.0
    verdict(1, ok, f"max|rho - (3 - 2t - 2e^-t)| = {err:.2e} on [0, 1]; T = {fate.T:.12f} "
                   f"(oracle {SHRINK_T_110}, |dT| = {T_err:.1e}); {wall:.3f}s", capsys)


def test_criterion_02_fate_classification(capsys):
    t0 = time.perf_counter()
    checks = []
    f = es.classify_fate(es.ScaleProblem(1.0, 0.0, 1.0))
    checks.append(("lam>0", f.kind is es.FateKind.FINITE_TIME))
    for lam in (0.3, 2.0):
        checks.append((f"lam={lam}", es.classify_fate(es.ScaleProblem(lam, 1.0, 1.0)).kind is es.FateKind.FINITE_TIME))
    f = es.classify_fate(es.ScaleProblem(0.0, -2.0, 1.0))
    checks.append(("mu<-d", f.kind is es.FateKind.FINITE_TIME and abs(f.T - math.log(2.0)) <= 1e-10))
    d, mu = 0.5, -3.0
    f = es.classify_fate(es.ScaleProblem(0.0, mu, d))
    checks.append(("mu<-d general", abs(f.T + math.log(1 + d / mu) / d) <= 1e-10))
    checks.append(("mu=-d", es.classify_fate(es.ScaleProblem(0.0, -1.0, 1.0)).kind is es.FateKind.ASYMPTOTIC))
    checks.append(("lam=-1,mu=1", es.classify_fate(es.ScaleProblem(-1.0, 1.0, 1.0)).kind is es.FateKind.SMOOTH_FOREVER))
    wall = time.perf_counter() - t0
    bad = [name for name, good in checks if not good]
    verdict(2, not bad and wall < 1.0,
            f"{len(checks) - len(bad)}/{len(checks)} cases (T(mu=-2) - ln 2 = {f.T + math.log(1 + d / mu) / d:.1e}); "
            f"{wall:.3f}s" + (f"; failed {bad}" if bad else ""), capsys)


def test_criterion_03_stationarity(capsys, tmp_path_factory):
    t0 = time.perf_counter()
    res = with_threads(8, lambda: dy.evolve(config_3()))
    wall = time.perf_counter() - t0
    CSVS.setdefault(3, {})[8] = csv_bytes(res, tmp_path_factory)
    ok = res.event == "" and res.sup_h_max <= 1e-12 and res.final.t == pytest.approx(5.0) and wall < 60
    verdict(3, ok, f"sup|g - delta| = {res.sup_h_max:.1e} over {res.steps} steps to t = 5; {wall:.1f}s", capsys)


def test_criterion_04_pde_ode(capsys, tmp_path_factory):
    t0 = time.perf_counter()
    out = {}
    for n in (3, 2):
        res = with_threads(8, lambda: dy.evolve(config_4(n)))
        CSVS.setdefault(4, {})[8 * 10 + n] = csv_bytes(res, tmp_path_factory)
        g = res.final.g
        homogeneous = float(np.max(np.abs(g - g[(...,) + (slice(0, 1),) * n])))
        rho_pde = float(g[(0, 0) + (0,) * n])
        p = es.ScaleProblem(0.0, 0.1, 1.0, n)
        rho_sub = float(es.integrate_scale(p, SUB, 1e-3, 1.0).rho[-1])
        w = 1 + (n - 1) * 0.1 * (1 - math.exp(-1.0))  # w = rho^(n-1), w'' + w' = 0
        rho_w = w ** (1.0 / (n - 1))
        rho_cf = es.rho_closed_form(p, 1.0)[0]
        out[n] = (abs(rho_pde - rho_sub), abs(rho_pde - rho_w), abs(rho_pde - rho_cf), homogeneous)
    wall = time.perf_counter() - t0
    ok = (max(out[3][:2]) <= 1e-8 and max(out[2][:3]) <= 1e-8 and out[3][3] <= 1e-12 and out[2][3] <= 1e-12
          and wall < 60)
    verdict(4, ok, f"n=3 |PDE - substitution ODE| = {out[3][0]:.1e} (closed form {out[3][1]:.1e}); "
                   f"n=2 vs ODE {out[2][0]:.1e}, vs closed form {out[2][2]:.1e}; "
                   f"finding: n=3 PDE vs the closed-form variant differs by {out[3][2]:.2e}; {wall:.1f}s", capsys)


@pytest.fixture(scope="module")
def conformal_residuals():
    """Residual sup norms on conformal runs, N = 24 and 48, time step tied to h."""
    t0 = time.perf_counter()
    out = {}
    for n in (2, 3):
        coarse = geo.Grid(n, 24)
        init = {"kind": "conformal", "phi": 0.1, "psi": 0.1}
        dt24 = 0.5 / math.ceil(0.5 / dy.cfl_dt(dy.initial_state(init, coarse).g, coarse, 0.5))
        for N in (24, 48):
            cfg = dy.RunConfig(dimension=n, points_per_axis=N, t_end=0.5, dt=dt24 * 24 / N,
                               initial_data=init, snapshot_every=1)
            kept = []

            def keep(i, s, _kept=kept):
                _kept.append(s.copy())
                del _kept[:-3]

            dy.evolve(cfg, on_snapshot=keep)
            grid, p, traj = cfg.grid, FlowParams(n, 1.0), tuple(kept)
            out[(n, N)] = {
                "u": float(np.max(np.abs(u_evolution_residual(traj, p, grid)))),
                "v": float(np.max(np.abs(v_evolution_residual(traj, p, grid)))),
                "wave": float(np.max(np.abs(scalar_wave_residual(traj, p, grid, bracket="nominal")))),
                "wave_closed": float(np.max(np.abs(scalar_wave_residual(traj, p, grid, bracket="closed")))),
            }
    out["wall"] = time.perf_counter() - t0
    return out


def ratios(res, key):
    return {n: res[(n, 24)][key] / res[(n, 48)][key] for n in (2, 3)}


def test_criterion_05_trace_identities(capsys, conformal_residuals):
    ru, rv = ratios(conformal_residuals, "u"), ratios(conformal_residuals, "v")
    ok = all(3.2 <= r <= 4.8 for r in list(ru.values()) + list(rv.values())) and conformal_residuals["wall"] < 300
    verdict(5, ok, "refinement ratios u: " + ", ".join(f"n={n} {r:.2f}" for n, r in ru.items())
            + "; v: " + ", ".join(f"n={n} {r:.2f}" for n, r in rv.items())
            + f"; {conformal_residuals['wall']:.0f}s", capsys)


def test_criterion_06_scalar_wave(capsys, conformal_residuals):
    rw = ratios(conformal_residuals, "wave")
    rc = ratios(conformal_residuals, "wave_closed")
    kept = []
    homothetic = dy.evolve(dy.RunConfig(dimension=3, points_per_axis=16, t_end=0.3, dt=0.1,
                                        initial_data={"kind": "homothetic", "mu": 0.1}, snapshot_every=1),
                           on_snapshot=lambda i, s: kept.append(s.copy()))
    hom = float(np.max(np.abs(scalar_wave_residual(tuple(kept[1:4]), FlowParams(3, 1.0), geo.Grid(3, 16),
                                                   bracket="nominal"))))
    assert homothetic.event == ""
    ok = all(3.2 <= r <= 4.8 for r in rw.values()) and hom <= 1e-12
    verdict(6, ok, "nominal bracket ratios " + ", ".join(f"n={n} {r:.2f}" for n, r in rw.items())
            + f" (sup {conformal_residuals[(3, 48)]['wave']:.2e} at n=3, N=48); homothetic residual {hom:.1e}; "
            + "closed bracket ratios " + ", ".join(f"n={n} {r:.2f}" for n, r in rc.items())
            + f"; {conformal_residuals['wall']:.0f}s", capsys)


def test_criterion_07_symmetric_hyperbolicity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    failures, sizes, lam_min = 0, {}, math.inf
    for n in (2, 3):
        for _ in range(100):
            A = rng.normal(size=(n, n))
            g = A @ A.T + 0.1 * np.eye(n)
            mats = red.assemble_matrices(g)
            sizes[n] = mats.A0.shape[0]
            sym = np.array_equal(mats.A0, mats.A0.T) and all(np.array_equal(Aj, Aj.T) for Aj in mats.A)
            lam = float(np.linalg.eigvalsh(mats.A0)[0])
            lam_min = min(lam_min, lam)
            failures += not (sym and lam > 0 and red.verify_symmetric_hyperbolic(mats).passed)
    wall = time.perf_counter() - t0
    ok = failures == 0 and sizes == {2: 12, 3: 30} and wall < 1.0
    verdict(7, ok, f"200 samples, {failures} failures, sizes {sizes}, min eig(A0) {lam_min:.2e}; {wall:.3f}s", capsys)


def test_criterion_08_gauge_consistency(capsys):
    t0 = time.perf_counter()
    errs = []
    for N in (24, 48):
        grid = geo.Grid(3, N)
        g = conformal_metric(grid, 0.1)
        X0, X1, X2 = grid.coords()
        g[0, 1] = g[1, 0] = 0.05 * np.sin(X2)
        errs.append(float(np.max(np.abs(geo.ricci_via_expansion(g, grid)
                                        - geo.curvature(g, grid, with_riemann=False).ricci))))
    ratio = errs[0] / errs[1]
    grid = geo.Grid(3, 16)
    p = FlowParams(3, 1.0)
    worst = 0.0
    for rho, rhop in ((1.0, 0.1), (2.5, -0.4), (0.6, 1.3)):
        s = FlowState(0.0, geo.identity_field(grid, rho), geo.identity_field(grid, rhop))
        worst = max(worst, float(np.max(np.abs(red.gauge_fixed_rhs(s, p, grid) - dissipative_rhs(s, p, grid)))))
    wall = time.perf_counter() - t0
    ok = 3.2 <= ratio <= 4.8 and worst <= 1e-12 and wall < 60
    verdict(8, ok, f"expansion vs curvature ratio {ratio:.2f} ({errs[0]:.1e} -> {errs[1]:.1e}); "
                   f"gauge-fixed vs full on homothetic data {worst:.1e}; {wall:.1f}s", capsys)


@pytest.fixture(scope="module")
def stability_runs():
    t0 = time.perf_counter()
    main = with_threads(8, lambda: dy.evolve(config_9(1.0)))
    paired = with_threads(8, lambda: dy.evolve(config_9(0.1)))
    return main, paired, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_09_stability(capsys, stability_runs, tmp_path_factory):
    main, paired, wall = stability_runs
    CSVS.setdefault(9, {})[8] = csv_bytes(main, tmp_path_factory) + csv_bytes(paired, tmp_path_factory)
    e0, e1 = main.records[0].energy, main.records[-1].energy
    ep = paired.records[-1].energy
    ratio = main.sup_h_max / 1e-3
    ok = (main.event == "" and paired.event == "" and main.final.t == pytest.approx(10.0)
          and ratio <= 10.0 and e1 < e0 and e1 < ep and wall < 1800)
    verdict(9, ok, f"events '{main.event or 'none'}'/'{paired.event or 'none'}'; sup_h <= {ratio:.3f} eps; "
                   f"E(10)/E(0) = {e1 / e0:.4f}; E_d=1(10) = {e1:.4e} vs E_d=0.1(10) = {ep:.4e}; "
                   f"{wall / 60:.1f} min", capsys)


def test_criterion_10_solitons(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)

    def random_f(grid, amp=0.2):
        Xs = grid.coords()
        f = np.zeros(grid.shape)
        for _ in range(3):
            kv = rng.integers(-2, 3, size=grid.n)
            f += amp * rng.uniform(-1, 1) * np.sin(sum(int(k) * x for k, x in zip(kv, Xs)) + rng.uniform(0, 6.3))
        return f

    def random_g(grid):
        Xs = grid.coords()
        g = geo.identity_field(grid) * np.exp(0.2 * random_f(grid, 0.5))
        g[0, 1] = g[1, 0] = 0.05 * rng.uniform(-1, 1) * np.sin(Xs[-1] + rng.uniform(0, 6.3))
        return g

    trace_gap = 0.0
    for n in (2, 3):
        grid = geo.Grid(n, 16)
        for _ in range(5):
            c = sol.SolitonCandidate(random_g(grid), rng.uniform(0.5, 2), f=random_f(grid))
            gi = geo.invert_metric(c.g)
            tr = geo.trace_sym(sol.gradient_soliton_residual(c, grid), gi)
            ref = sol.trace_residual(c, grid)
            trace_gap = max(trace_gap, float(np.max(np.abs(tr - ref)) / max(1.0, np.max(np.abs(ref)))))
    grid64 = geo.Grid(3, 64)
    rep = sol.nonexistence_certificate(sol.SolitonCandidate(random_g(grid64), 1.0, f=random_f(grid64)), grid64)
    div_ok = abs(rep.divergence_integral) <= 1e-8 and abs(rep.laplacian_integral) <= 1e-8
    grid = geo.Grid(3, 16)
    const = sol.nonexistence_certificate(
        sol.SolitonCandidate(geo.identity_field(grid), 1.0, f=np.full(grid.shape, 0.7)), grid)
    const_ok = const.passed and float(np.max(np.abs(const.gradient_residual))) == 0.0
    q_min = min(sol.nonexistence_certificate(sol.SolitonCandidate(random_g(grid), 1.0, f=random_f(grid)),
                                             grid).quadratic_integral for _ in range(50))
    wall = time.perf_counter() - t0
    ok = trace_gap <= 1e-12 and div_ok and const_ok and q_min >= 0 and wall < 120
    verdict(10, ok, f"trace relation gap {trace_gap:.1e}; divergence integrals at N=64 "
                    f"{abs(rep.divergence_integral):.1e}, {abs(rep.laplacian_integral):.1e}; "
                    f"constant f on flat metric passes={const_ok}; min Q over 50 = {q_min:.3e}; {wall:.1f}s", capsys)


@pytest.mark.slow
def test_criterion_11_determinism(capsys, tmp_path_factory, stability_runs):
    # threads = 8 results of runs 3, 4 and 9, computed here if their tests were deselected
    if 3 not in CSVS:
        CSVS[3] = {8: csv_bytes(with_threads(8, lambda: dy.evolve(config_3())), tmp_path_factory)}
    if 4 not in CSVS:
        CSVS[4] = {8 * 10 + n: csv_bytes(with_threads(8, lambda: dy.evolve(config_4(n))), tmp_path_factory)
                   for n in (3, 2)}
    if 9 not in CSVS:
        main, paired, _ = stability_runs
        CSVS[9] = {8: csv_bytes(main, tmp_path_factory) + csv_bytes(paired, tmp_path_factory)}
    pool = with_threads(8, _kernels.get_threads)
    same = {}
    same[3] = csv_bytes(with_threads(1, lambda: dy.evolve(config_3())), tmp_path_factory) == CSVS[3][8]
    same[4] = all(csv_bytes(with_threads(1, lambda: dy.evolve(config_4(n))), tmp_path_factory) == CSVS[4][80 + n]
                  for n in (3, 2))
    one = with_threads(1, lambda: (dy.evolve(config_9(1.0)), dy.evolve(config_9(0.1))))
    same[9] = csv_bytes(one[0], tmp_path_factory) + csv_bytes(one[1], tmp_path_factory) == CSVS[9][8]
    ok = all(same.values()) and pool == 8
    verdict(11, ok, f"byte-identical CSVs with 1 vs {pool} threads: "
                    + ", ".join(f"run {k} {'yes' if v else 'NO'}" for k, v in same.items()), capsys)
