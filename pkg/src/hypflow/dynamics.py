"""Method-of-lines integration of the flow and the experiments built on it."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from . import geometry as geo
from . import reduction
from .errors import DegenerateMetric, NonFinite
from .flow import FlowParams, FlowState, dissipative_rhs, trace_quantities
from .geometry import Grid

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "dt", "u_min", "u_max", "v_max", "w_max", "R_min", "R_max",
               "min_eig_g", "gamma_sup", "gamma_l2", "energy", "sup_h", "event")

RHS_VARIANTS = ("full", "gauge_fixed")
EXPERIMENTS = ("generic", "homothetic", "stability", "convergence")


# ---------------------------------------------------------------------------
# initial data

@dataclass(frozen=True)
class Bump:
    """Compactly supported tensor bump A_ij * b(|x - c| / r), b(s) = exp(1 - 1/(1 - s^2))."""

    amplitude: tuple
    center: tuple | None = None
    radius: float = 1.0

    def profile(self, grid: Grid) -> np.ndarray:
        c = self.center if self.center is not None else (0.5 * grid.L,) * grid.n
        X = grid.coords()
        r2 = sum((X[a] - c[a]) ** 2 for a in range(grid.n)) / self.radius ** 2
        out = np.zeros(grid.shape)
        inside = r2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    def field(self, grid: Grid) -> np.ndarray:
        A = np.asarray(self.amplitude, dtype=float)
        if A.shape != (grid.n, grid.n) or not np.array_equal(A, A.T):
            raise ValueError("bump amplitude must be a symmetric n x n matrix")
        b = self.profile(grid)
        return A[(...,) + (None,) * grid.n] * b


@dataclass(frozen=True)
class PerturbationSpec:
    """Initial data g = delta + eps*g0, k = eps*g1 with compact bumps g0, g1."""

    epsilon: float
    g0: Bump
    g1: Bump

    def validate(self, grid: Grid):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        for b in (self.g0, self.g1):
            if np.max(np.abs(b.amplitude)) > 1.0:
                raise ValueError("bump amplitudes must be bounded by 1")
            c = b.center if b.center is not None else (0.5 * grid.L,) * grid.n
            if any(ci - b.radius <= 0 or ci + b.radius >= grid.L for ci in c):
                raise ValueError("bump support must lie strictly inside the box")


def default_perturbation(n: int, epsilon: float) -> PerturbationSpec:
    """Isotropic metric bump with a half-strength isotropic velocity bump."""
    eye = tuple(tuple(1.0 if i == j else 0.0 for j in range(n)) for i in range(n))
    half = tuple(tuple(0.5 if i == j else 0.0 for j in range(n)) for i in range(n))
    return PerturbationSpec(epsilon, Bump(eye), Bump(half))


def initial_state(spec: dict, grid: Grid) -> FlowState:
    """Build (g, k) at t = 0 from an initial-data spec.

    kinds:
      flat                        g = delta, k = 0
      homothetic   scale, mu      g = scale*delta, k = mu*g
      conformal    phi, psi       g = e^{2 phi} delta, k = 2 psi g with smooth
                                  periodic phi, psi of the given amplitudes
      perturbation epsilon, g0, g1 (bump dicts)
    """
    kind = spec.get("kind", "flat")
    n = grid.n
    if kind == "flat":
        return FlowState(0.0, geo.identity_field(grid), np.zeros((n, n) + grid.shape))
    if kind == "homothetic":
        g = geo.identity_field(grid, float(spec.get("scale", 1.0)))
        return FlowState(0.0, g, float(spec.get("mu", 0.0)) * g)
    if kind == "conformal":
        X = grid.coords()
        kx = [2.0 * math.pi / grid.L * x for x in X]
        a, b = float(spec.get("phi", 0.1)), float(spec.get("psi", 0.1))
        phi = a * np.sin(kx[0]) * np.cos(kx[1])
        psi = b * np.cos(kx[0] + kx[1])
        if n >= 3:
            phi = phi + 0.5 * a * np.sin(kx[2] + 0.3)
            psi = psi + 0.5 * b * np.sin(kx[1]) * np.cos(kx[2])
        g = geo.identity_field(grid) * np.exp(2.0 * phi)
        return FlowState(0.0, g, 2.0 * psi * g)
    if kind == "perturbation":
        p = perturbation_from_dict(spec, n)
        p.validate(grid)
        g = geo.identity_field(grid) + p.epsilon * p.g0.field(grid)
        return FlowState(0.0, g, p.epsilon * p.g1.field(grid))
    raise ValueError(f"unknown initial data kind {kind!r}")


def perturbation_from_dict(spec: dict, n: int) -> PerturbationSpec:
    eps = float(spec.get("epsilon", 1e-3))
    if "g0" not in spec and "g1" not in spec:
        return default_perturbation(n, eps)
    d = default_perturbation(n, eps)
    bumps = []
    for key, dflt in (("g0", d.g0), ("g1", d.g1)):
        b = spec.get(key)
        if b is None:
            bumps.append(dflt)
        else:
            amp = tuple(tuple(float(x) for x in row) for row in b["amplitude"])
            ctr = tuple(float(x) for x in b["center"]) if b.get("center") is not None else None
            bumps.append(Bump(amp, ctr, float(b.get("radius", 1.0))))
    return PerturbationSpec(eps, bumps[0], bumps[1])


# ---------------------------------------------------------------------------
# stepping

def cfl_dt(g: np.ndarray, grid: Grid, cfl_factor: float) -> float:
    """cfl_factor * h / (sqrt(n) * max sqrt(lambda_max(g^{-1})))."""
    geo.spd_check(g)
    lam_max_inv = 1.0 / geo.min_eigenvalue(g)
    return cfl_factor * grid.h / (math.sqrt(grid.n) * math.sqrt(float(np.max(lam_max_inv))))


def make_rhs(variant: str, params: FlowParams, grid: Grid, order: int) -> Callable[[FlowState], np.ndarray]:
    if variant == "full":
        return lambda s: dissipative_rhs(s, params, grid, order)
    if variant == "gauge_fixed":
        return lambda s: reduction.gauge_fixed_rhs(s, params, grid, order)
    raise ValueError(f"unknown rhs variant {variant!r}")


def _finite_or_raise(arr: np.ndarray, t: float, where: str):
    if not np.all(np.isfinite(arr)):
        raise NonFinite(t, where)


def step(state: FlowState, dt: float, rhs: Callable[[FlowState], np.ndarray]) -> FlowState:
    """One classical RK4 step of d(g, k)/dt = (k, F(g, k)).

    Every stage metric passes through the SPD guard inside ``rhs``.
    """
    t = state.t
    g0, k0 = state.g, state.k
    a1 = rhs(state)
    _finite_or_raise(a1, t, "rhs")
    s2 = FlowState(t + 0.5 * dt, g0 + 0.5 * dt * k0, k0 + 0.5 * dt * a1)
    a2 = rhs(s2)
    _finite_or_raise(a2, t, "rhs")
    s3 = FlowState(t + 0.5 * dt, g0 + 0.5 * dt * s2.k, k0 + 0.5 * dt * a2)
    a3 = rhs(s3)
    _finite_or_raise(a3, t, "rhs")
    s4 = FlowState(t + dt, g0 + dt * s3.k, k0 + dt * a3)
    a4 = rhs(s4)
    _finite_or_raise(a4, t, "rhs")
    g = g0 + (dt / 6.0) * (k0 + 2.0 * s2.k + 2.0 * s3.k + s4.k)
    k = k0 + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    g = geo.symmetrize(g)
    k = geo.symmetrize(k)
    _finite_or_raise(g, t + dt, "g")
    _finite_or_raise(k, t + dt, "k")
    geo.spd_check(g)
    return FlowState(t + dt, g, k)


# ---------------------------------------------------------------------------
# diagnostics

def energy(state: FlowState, grid: Grid, order: int = 2) -> float:
    """sum_{i<=j} int [(d_t h_ij)^2 + sum_k (d_k h_ij)^2 + h_ij^2] dx, h = g - delta."""
    n = grid.n
    hP = geo.pack_sym(state.g - geo.identity_field(grid))
    kP = geo.pack_sym(state.k)
    dens = np.sum(kP * kP, axis=0) + np.sum(hP * hP, axis=0)
    for a in range(n):
        dh = geo.partial(hP, a, grid, order)
        dens += np.sum(dh * dh, axis=0)
    return grid.integrate(dens)


def sup_h(state: FlowState, grid: Grid) -> float:
    return float(np.max(np.abs(state.g - geo.identity_field(grid))))


@dataclass
class EnergyRecord:
    t: float
    dt: float
    u_min: float
    u_max: float
    v_max: float
    w_max: float
    R_min: float
    R_max: float
    min_eig_g: float
    gamma_sup: float
    gamma_l2: float
    energy: float
    sup_h: float
    event: str = ""

    def csv_row(self) -> str:
        vals = [self.t, self.dt, self.u_min, self.u_max, self.v_max, self.w_max, self.R_min,
                self.R_max, self.min_eig_g, self.gamma_sup, self.gamma_l2, self.energy, self.sup_h]
        return ",".join(repr(float(v)) for v in vals) + "," + self.event


def diagnose(state: FlowState, grid: Grid, dt: float, order: int = 2, event: str = "") -> EnergyRecord:
    tq = trace_quantities(state)
    cb = geo.curvature(state.g, grid, order, with_riemann=False)
    gam_k = cb.contracted
    return EnergyRecord(
        t=state.t, dt=dt,
        u_min=float(np.min(tq.u)), u_max=float(np.max(tq.u)),
        v_max=float(np.max(tq.v)), w_max=float(np.max(tq.w)),
        R_min=float(np.min(cb.scalar)), R_max=float(np.max(cb.scalar)),
        min_eig_g=float(np.min(geo.min_eigenvalue(state.g))),
        gamma_sup=float(np.max(np.abs(gam_k))),
        gamma_l2=math.sqrt(grid.integrate(np.sum(gam_k * gam_k, axis=0))),
        energy=energy(state, grid, order),
        sup_h=sup_h(state, grid),
        event=event,
    )


def write_csv(records: list[EnergyRecord], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            fh.write(r.csv_row() + "\n")


# ---------------------------------------------------------------------------
# runs

@dataclass
class RunConfig:
    dimension: int = 3
    points_per_axis: int = 16
    box_length: float = 2.0 * math.pi
    d: float = 1.0
    cfl_factor: float = 0.5
    t_end: float = 1.0
    difference_order: int = 2
    rhs_variant: str = "full"
    experiment: str = "generic"
    initial_data: dict = field(default_factory=lambda: {"kind": "flat"})
    dt: float | None = None
    diagnostics_every: int = 1
    snapshot_every: int = 0
    output_dir: str | None = None

    def validate(self):
        if not 0 < self.cfl_factor <= 1:
            raise ValueError(f"cfl_factor must lie in (0, 1], got {self.cfl_factor}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.difference_order not in (2, 4):
            raise ValueError(f"difference_order must be 2 or 4, got {self.difference_order}")
        if self.rhs_variant not in RHS_VARIANTS:
            raise ValueError(f"rhs_variant must be one of {RHS_VARIANTS}, got {self.rhs_variant!r}")
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if self.points_per_axis < 8:
            raise ValueError(f"points_per_axis must be >= 8, got {self.points_per_axis}")
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.diagnostics_every < 1:
            raise ValueError("diagnostics_every must be >= 1")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")
        if self.experiment == "stability" and not self.t_end < 0.5 * self.box_length:
            raise ValueError(
                f"stability runs need t_end < box_length/2 ({0.5 * self.box_length}), got {self.t_end}")

    @property
    def grid(self) -> Grid:
        return Grid(self.dimension, self.points_per_axis, self.box_length)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    config: RunConfig
    records: list
    final: FlowState
    dt: float
    steps: int
    event: str  # "" | "degeneration" | "instability"
    event_time: float | None
    sup_h_max: float
    wall_seconds: float
    snapshots: list = field(default_factory=list)
    message: str = ""

    @property
    def exit_code(self) -> int:
        return {"": 0, "degeneration": 2, "instability": 3}[self.event]


def _steps_for(t_end: float, dt_max: float) -> tuple[int, float]:
    steps = max(1, math.ceil(t_end / dt_max - 1e-12))
    return steps, t_end / steps


def evolve(config: RunConfig, state: FlowState | None = None,
           on_snapshot: Callable[[int, FlowState], None] | None = None,
           max_halvings: int = 30) -> RunResult:
    """Integrate to ``t_end`` or to the first degeneration/instability event.

    The step is fixed for the whole run.  When a step fails, it is retried
    with halved sizes purely to localize the event time; the run then stops.
    """
    config.validate()
    grid = config.grid
    order = config.difference_order
    params = FlowParams(grid.n, config.d)
    if state is None:
        state = initial_state(config.initial_data, grid)
    geo.spd_check(state.g)
    rhs = make_rhs(config.rhs_variant, params, grid, order)
    dt_max = config.dt if config.dt is not None else cfl_dt(state.g, grid, config.cfl_factor)
    steps, dt = _steps_for(config.t_end, dt_max)
    t0 = time.perf_counter()
    records = [diagnose(state, grid, dt, order)]
    snaps = []
    if config.snapshot_every and on_snapshot is not None:
        on_snapshot(0, state)
        snaps.append(0)
    shmax = sup_h(state, grid)
    event, event_time, message = "", None, ""
    done = 0
    for i in range(1, steps + 1):
        try:
            state = step(state, dt, rhs)
        except (DegenerateMetric, NonFinite) as exc:
            event = "degeneration" if isinstance(exc, DegenerateMetric) else "instability"
            event_time, state = _localize(state, dt, rhs, max_halvings)
            message = str(exc)
            log.info("event %s near t=%.6g: %s", event, event_time, exc)
            break
        done = i
        shmax = max(shmax, sup_h(state, grid))
        if i % config.diagnostics_every == 0 or i == steps:
            records.append(diagnose(state, grid, dt, order))
        if config.snapshot_every and i % config.snapshot_every == 0 and on_snapshot is not None:
            on_snapshot(i, state)
            snaps.append(i)
    if event:
        try:
            rec = diagnose(state, grid, dt, order, event=event)
        except (DegenerateMetric, NonFinite, FloatingPointError):
            rec = EnergyRecord(state.t, dt, *([math.nan] * 11), event=event)
        rec.t = event_time
        records.append(rec)
    return RunResult(config, records, state, dt, done, event, event_time, shmax,
                     time.perf_counter() - t0, snaps, message)


def _localize(state: FlowState, dt: float, rhs, max_halvings: int) -> tuple[float, FlowState]:
    """Advance with successively halved steps until the failure is bracketed
    to within dt / 2**max_halvings; return (event time estimate, last good state)."""
    limit = state.t + dt
    h = dt
    good = state
    for _ in range(max_halvings):
        h *= 0.5
        while good.t + h <= limit:
            try:
                trial = step(good, h, rhs)
            except (DegenerateMetric, NonFinite):
                break
            good = trial
    return min(good.t + h, limit), good


# ---------------------------------------------------------------------------
# stability experiment

@dataclass
class StabilityReport:
    epsilon: float
    d: float
    d_paired: float
    energy_initial: float
    energy_final: float
    decay_ratio: float
    sup_h_max: float
    sup_h_constant: float
    energy_final_paired: float
    dissipation_monotone: bool
    event: str
    event_paired: str
    result: RunResult
    paired: RunResult | None


def stability_experiment(spec: PerturbationSpec, config: RunConfig, d_paired: float | None = 0.1) -> StabilityReport:
    """Run the perturbation experiment and, optionally, the same data with a
    smaller dissipation coefficient."""
    grid = config.grid
    spec.validate(grid)
    init = {"kind": "perturbation", "epsilon": spec.epsilon,
            "g0": {"amplitude": spec.g0.amplitude, "center": spec.g0.center, "radius": spec.g0.radius},
            "g1": {"amplitude": spec.g1.amplitude, "center": spec.g1.center, "radius": spec.g1.radius}}
    cfg = RunConfig(**{**config.to_dict(), "initial_data": init, "experiment": "stability"})
    res = evolve(cfg)
    if res.event:
        log.warning("stability run with epsilon=%g ended with %s at t=%s", spec.epsilon, res.event, res.event_time)
    paired = None
    if d_paired is not None:
        paired = evolve(RunConfig(**{**cfg.to_dict(), "d": d_paired}))
    e0 = res.records[0].energy
    e1 = res.records[-1].energy
    ep = paired.records[-1].energy if paired is not None else math.nan
    return StabilityReport(
        epsilon=spec.epsilon, d=cfg.d, d_paired=d_paired if d_paired is not None else math.nan,
        energy_initial=e0, energy_final=e1,
        decay_ratio=e1 / e0 if e0 > 0 else math.nan,
        sup_h_max=res.sup_h_max,
        sup_h_constant=res.sup_h_max / spec.epsilon if spec.epsilon > 0 else math.nan,
        energy_final_paired=ep,
        dissipation_monotone=bool(e1 < ep) if paired is not None else False,
        event=res.event, event_paired=paired.event if paired is not None else "",
        result=res, paired=paired,
    )


# ---------------------------------------------------------------------------
# convergence study

@dataclass
class ConvergenceReport:
    resolutions: tuple
    refinement_ratio: float | None  # successive resolution ratio (1 for identical runs)
    dts: tuple
    differences: dict  # field -> (|f1 - f2|, |f2 - f4|)
    orders: dict  # field -> observed order or None
    residual_norms: dict  # residual name -> per-resolution sup norms
    residual_orders: dict
    warnings: list


def _restrict(f: np.ndarray, factor: int, n: int) -> np.ndarray:
    sl = (slice(None),) * (f.ndim - n) + (slice(None, None, factor),) * n
    return f[sl]


def convergence_study(config: RunConfig, refinements=(1, 2, 4), residuals: bool = True) -> ConvergenceReport:
    """Self-convergence of (g, k) at t_end plus identity-residual decay.

    The coarse step comes from the CFL rule and is divided by the refinement
    factor exactly, so all runs land on t_end.  Residuals are evaluated on
    the last three stored states of each run.
    """
    from .flow import u_evolution_residual, v_evolution_residual, scalar_wave_residual

    config.validate()
    refinements = tuple(int(r) for r in refinements)
    warn = []
    if len(refinements) < 2 or any(b <= a for a, b in zip(refinements, refinements[1:])):
        msg = "refinement factors must be strictly increasing; order undefined"
        warnings.warn(msg)
        ratio = 1.0 if len(set(refinements)) == 1 else None
        return ConvergenceReport(refinements, ratio, (), {}, {"g": None, "k": None}, {}, {}, [msg])
    base = config.grid
    s0 = initial_state(config.initial_data, base)
    dt0 = config.dt if config.dt is not None else cfl_dt(s0.g, base, config.cfl_factor)
    steps0, dt0 = _steps_for(config.t_end, dt0)
    finals, dts = [], []
    res_norms = {"u": [], "v": [], "scalar_wave": [], "scalar_wave_closed": []}
    params = FlowParams(base.n, config.d)
    for r in refinements:
        cfg = RunConfig(**{**config.to_dict(), "points_per_axis": base.N * r, "dt": dt0 / r})
        grid = cfg.grid
        kept = []

        def keep(i, s, _kept=kept):
            _kept.append(s.copy())
            del _kept[:-3]

        cfg.snapshot_every = 1
        res = evolve(cfg, on_snapshot=keep)
        if res.event:
            warn.append(f"run at refinement {r} ended early: {res.event} at t={res.event_time}")
            warnings.warn(warn[-1])
        finals.append((res.final, r))
        dts.append(res.dt)
        if residuals and len(kept) == 3:
            traj = tuple(kept)
            o = cfg.difference_order
            res_norms["u"].append(float(np.max(np.abs(u_evolution_residual(traj, params, grid, o)))))
            res_norms["v"].append(float(np.max(np.abs(v_evolution_residual(traj, params, grid, o)))))
            for key, br in (("scalar_wave", "nominal"), ("scalar_wave_closed", "closed")):
                r_sw = scalar_wave_residual(traj, params, grid, o, bracket=br)
                res_norms[key].append(float(np.max(np.abs(r_sw))))
    diffs, orders = {}, {}
    n = base.n
    for name in ("g", "k"):
        fs = [_restrict(getattr(s, name), r, n) for s, r in finals]
        if len(fs) < 3:
            orders[name] = None
            continue
        e12 = float(np.max(np.abs(fs[0] - fs[1])))
        e24 = float(np.max(np.abs(fs[1] - fs[2])))
        diffs[name] = (e12, e24)
        ratio_base = refinements[1] / refinements[0]
        orders[name] = math.log(e12 / e24) / math.log(ratio_base) if e12 > 0 and e24 > 0 else None
    res_orders = {}
    for name, vals in res_norms.items():
        res_orders[name] = [
            math.log(vals[i] / vals[i + 1]) / math.log(refinements[i + 1] / refinements[i])
            if vals[i] > 0 and vals[i + 1] > 0 else None
            for i in range(len(vals) - 1)
        ]
    ratio = refinements[1] / refinements[0]
    return ConvergenceReport(refinements, ratio, tuple(dts), diffs, orders, res_norms, res_orders, warn)
