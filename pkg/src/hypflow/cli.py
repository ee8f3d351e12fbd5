"""Command-line front end.

Every subcommand takes an optional JSON config (``--config``) whose keys are
the subcommand's parameters; flags override the file.  Unknown keys and
out-of-range values are usage errors (exit 64).  Runs exit 0 on success,
2 on a degeneration event and 3 on a numerical instability.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import _kernels
from . import dynamics as dyn
from . import exact_scale as es
from . import flow
from . import geometry as geo
from . import reduction
from . import snapshots as snap
from . import soliton as sol
from .errors import DegenerateMetric, HypflowError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_DEGENERATE, EXIT_UNSTABLE, EXIT_USAGE = 0, 2, 3, 64

log = logging.getLogger("hypflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# parameter tables: key -> (type, default, help)

def _json_value(text):
    if not isinstance(text, str):
        return text
    try:
        return json.loads(text)
    except ValueError as exc:
        raise ValueError(f"not valid JSON: {text!r}") from exc


def _opt_float(x):
    return None if x is None or x == "none" else float(x)


def _opt_int(x):
    return None if x is None or x == "none" else int(x)


def _int_list(x):
    x = _json_value(x)
    if isinstance(x, (int, float)):
        x = [x]
    return [int(v) for v in x]


def _opt_int_list(x):
    return None if x is None or x == "none" else _int_list(x)


GLOBAL = {
    "output_dir": (str, None, "directory for artifacts"),
    "seed": (int, 0, "64-bit seed (recorded in reports)"),
    "threads": (int, None, "worker threads (fallback: HYPFLOW_THREADS)"),
    "log_level": (str, "WARNING", "logging level"),
}

_RUN_DEFAULTS = {f.name: f.default if not callable(f.default_factory) else f.default_factory()
                 for f in dc_fields(dyn.RunConfig)}

RUN = {
    "dimension": (int, _RUN_DEFAULTS["dimension"], "2 or 3"),
    "points_per_axis": (int, _RUN_DEFAULTS["points_per_axis"], "grid points per axis (>= 8)"),
    "box_length": (float, _RUN_DEFAULTS["box_length"], "side of the periodic box"),
    "d": (float, _RUN_DEFAULTS["d"], "dissipation coefficient (> 0)"),
    "cfl_factor": (float, _RUN_DEFAULTS["cfl_factor"], "CFL factor in (0, 1]"),
    "t_end": (float, _RUN_DEFAULTS["t_end"], "final time"),
    "difference_order": (int, _RUN_DEFAULTS["difference_order"], "2 or 4"),
    "rhs_variant": (str, _RUN_DEFAULTS["rhs_variant"], "full or gauge_fixed"),
    "experiment": (str, _RUN_DEFAULTS["experiment"], "generic, homothetic, stability, convergence"),
    "initial_data": (_json_value, _RUN_DEFAULTS["initial_data"], "initial data spec (JSON)"),
    "dt": (_opt_float, None, "fixed step (default: CFL rule)"),
    "diagnostics_every": (int, 1, "steps between diagnostics rows"),
    "snapshot_every": (int, 0, "steps between snapshots (0: none)"),
}

COMMANDS = {
    "exact": {
        "lambda": (float, 1.0, "Einstein constant"),
        "mu": (float, 0.0, "initial rate"),
        "d": (float, 1.0, "dissipation coefficient (> 0)"),
        "n": (int, 3, "dimension (>= 2)"),
        "variant": (str, es.ScaleVariant.CLOSED_FORM.value, "closed-form or substitution"),
        "dt": (float, 1e-3, "step of the ODE integration"),
        "t_end": (float, 5.0, "final time"),
        "print_every": (int, 10, "print every k-th sample"),
    },
    "evolve": {**RUN, "dump_matrices_at": (_opt_int_list, None, "grid index for a dense matrix dump")},
    "stability": {
        **RUN,
        "dimension": (int, 3, "2 or 3"),
        "points_per_axis": (int, 96, "grid points per axis"),
        "box_length": (float, 40.0, "side of the periodic box"),
        "t_end": (float, 10.0, "final time (< box_length / 2)"),
        "experiment": (str, "stability", "fixed"),
        "diagnostics_every": (int, 5, "steps between diagnostics rows"),
        "epsilon": (float, 1e-3, "perturbation size"),
        "d_paired": (_opt_float, 0.1, "dissipation of the paired run (none to skip)"),
        "g0": (_json_value, None, "metric bump {amplitude, center, radius}"),
        "g1": (_json_value, None, "velocity bump {amplitude, center, radius}"),
    },
    "soliton": {
        "dimension": (int, 3, "2 or 3"),
        "points_per_axis": (int, 64, "grid points per axis"),
        "box_length": (float, 2.0 * math.pi, "side of the periodic box"),
        "difference_order": (int, 2, "2 or 4"),
        "candidate": (_json_value, {"metric": {"kind": "flat"}, "d": 1.0, "f": {"kind": "constant"}},
                      "candidate spec (JSON)"),
    },
    "identities": {
        "snapshots": (str, None, "trajectory directory written by evolve"),
        "d": (_opt_float, None, "dissipation (default: read from the run report)"),
        "difference_order": (_opt_int, None, "2 or 4 (default: from the run report)"),
    },
    "convergence": {**RUN, "refinements": (_int_list, [1, 2, 4], "refinement factors")},
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypflow", description="Dissipative hyperbolic geometric flow laboratory.")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, table in COMMANDS.items():
        sp = subs.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        for key, (typ, _default, help_) in {**GLOBAL, **table}.items():
            sp.add_argument(_flag(key), dest=key, type=str, default=argparse.SUPPRESS, help=help_)
    return parser


def resolve(command: str, config: dict | None, flags: dict) -> dict:
    """Merge defaults, config-file values and flag values (flags win)."""
    table = {**GLOBAL, **COMMANDS[command]}
    values = {k: v[1] for k, v in table.items()}
    for source in (config or {}), flags:
        for key, raw in source.items():
            if key not in table:
                raise UsageError(f"unknown key {key!r} for '{command}'; valid keys: {', '.join(sorted(table))}")
            typ = table[key][0]
            try:
                values[key] = None if raw is None else typ(raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key!r}: {raw!r} ({exc})") from None
    return values


def serialize(values: dict) -> dict:
    """Config as written back to disk (drops run-environment keys)."""
    return {k: v for k, v in values.items() if k not in ("threads", "log_level", "output_dir")}


# ---------------------------------------------------------------------------
# output helpers

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _report(command: str, values: dict, **body) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": serialize(values), **body}


def _out_dir(values: dict, command: str) -> Path:
    return Path(values["output_dir"] or f"hypflow-{command}")


def _run_config(values: dict, **extra) -> dyn.RunConfig:
    keys = [f.name for f in dc_fields(dyn.RunConfig) if f.name != "output_dir"]
    cfg = dyn.RunConfig(**{k: values[k] for k in keys if k in values}, **extra)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _summary(result: dyn.RunResult) -> dict:
    return {
        "steps": result.steps,
        "dt": result.dt,
        "final_time": result.final.t,
        "event": result.event or None,
        "event_time": result.event_time,
        "message": result.message or None,
        "sup_h_max": result.sup_h_max,
        "exit_code": result.exit_code,
        "snapshot_steps": result.snapshots,
    }


# ---------------------------------------------------------------------------
# subcommands

def cmd_exact(values: dict) -> int:
    try:
        p = es.ScaleProblem(values["lambda"], values["mu"], values["d"], values["n"])
        variant = es.ScaleVariant(values["variant"])
    except ValueError as exc:
        raise UsageError(f"{exc}; variant must be one of "
                         f"{[v.value for v in es.ScaleVariant]}, d > 0, n >= 2") from None
    if not values["dt"] > 0 or not values["t_end"] > 0 or values["print_every"] < 1:
        raise UsageError("dt and t_end must be positive and print_every >= 1")
    solution = es.integrate_scale(p, variant, values["dt"], values["t_end"])
    fate = es.classify_fate(p, variant)
    other = es.ScaleVariant.SUBSTITUTION if variant is es.ScaleVariant.CLOSED_FORM else es.ScaleVariant.CLOSED_FORM
    lines = ["t,rho,rho_prime"]
    last = len(solution.t) - 1
    for i in range(len(solution.t)):
        if i % values["print_every"] == 0 or i == last:
            lines.append(",".join(repr(float(a[i])) for a in (solution.t, solution.rho, solution.rhop)))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    print(f"fate: {fate.describe()}")
    if values["output_dir"]:
        out = Path(values["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "exact.csv").write_text(text)
        write_json(out / "exact.json", _report(
            "exact", values,
            fate=fate.to_dict(),
            other_variant={"variant": other.value, **es.classify_fate(p, other).to_dict()},
            integration_shrink_time=solution.shrink_time,
            alternative_conditions=es.alternative_conditions(p)))
    return EXIT_OK


def _snapshot_writer(directory: Path, grid: geo.Grid):
    def write(i, state):
        snap.write_state(directory, f"step_{i:06d}", grid, state)
    return write


def cmd_evolve(values: dict) -> int:
    cfg = _run_config(values)
    out = _out_dir(values, "evolve")
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid
    if values["dump_matrices_at"] is not None:
        _dump_matrices(cfg, values["dump_matrices_at"], out / "matrices.txt")
    writer = _snapshot_writer(out / "snapshots", grid) if cfg.snapshot_every else None
    result = dyn.evolve(cfg, on_snapshot=writer)
    dyn.write_csv(result.records, out / "diagnostics.csv")
    write_json(out / "report.json", _report("evolve", values, **_summary(result)))
    print(f"evolve: {result.steps} steps of dt={result.dt:.6g} to t={result.final.t:.6g}, "
          f"event={result.event or 'none'}, wall {result.wall_seconds:.2f}s")
    return result.exit_code


def _dump_matrices(cfg: dyn.RunConfig, point: list, path: Path) -> None:
    grid = cfg.grid
    if len(point) != grid.n or any(not 0 <= p < grid.N for p in point):
        raise UsageError(f"dump_matrices_at needs {grid.n} indices in [0, {grid.N - 1}]")
    state = dyn.initial_state(cfg.initial_data, grid)
    idx = (slice(None), slice(None)) + tuple(point)
    mats = reduction.assemble_matrices(state.g[idx])
    with open(path, "w") as fh:
        for name, M in [("A0", mats.A0)] + [(f"A{j + 1}", A) for j, A in enumerate(mats.A)]:
            fh.write(f"# {name}\n")
            np.savetxt(fh, M, fmt="%.17g")


def cmd_stability(values: dict) -> int:
    spec_dict = {"epsilon": values["epsilon"]}
    for key in ("g0", "g1"):
        if values[key] is not None:
            spec_dict[key] = values[key]
    try:
        spec = dyn.perturbation_from_dict(spec_dict, values["dimension"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad perturbation spec: {exc}") from None
    cfg = _run_config(values)
    try:
        spec.validate(cfg.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(values, "stability")
    out.mkdir(parents=True, exist_ok=True)
    rep = dyn.stability_experiment(spec, cfg, values["d_paired"])
    dyn.write_csv(rep.result.records, out / "diagnostics.csv")
    if rep.paired is not None:
        dyn.write_csv(rep.paired.records, out / "diagnostics_paired.csv")
    body = {k: getattr(rep, k) for k in (
        "epsilon", "d", "d_paired", "energy_initial", "energy_final", "decay_ratio", "sup_h_max",
        "sup_h_constant", "energy_final_paired", "dissipation_monotone")}
    body["run"] = _summary(rep.result)
    body["paired_run"] = _summary(rep.paired) if rep.paired is not None else None
    write_json(out / "stability.json", _report("stability", values, **body))
    print(f"stability: E(t_end)/E(0)={rep.decay_ratio:.6g}, sup_h/eps={rep.sup_h_constant:.4g}, "
          f"monotone={rep.dissipation_monotone}, wall {rep.result.wall_seconds:.1f}s")
    codes = [rep.result.exit_code] + ([rep.paired.exit_code] if rep.paired is not None else [])
    return max(codes)


def cmd_soliton(values: dict) -> int:
    try:
        grid = geo.Grid(values["dimension"], values["points_per_axis"], values["box_length"])
        if values["difference_order"] not in (2, 4):
            raise ValueError("difference_order must be 2 or 4")
        cand = sol.candidate_from_dict(values["candidate"], grid)
    except (TypeError, ValueError, AttributeError) as exc:
        raise UsageError(f"bad soliton config: {exc}") from None
    order = values["difference_order"]
    out = _out_dir(values, "soliton")
    if cand.V is not None:
        res = sol.soliton_residual(cand, grid, order)
        body = {"form": "vector_field", "residual_sup": float(np.max(np.abs(res))),
                "residual_l2": math.sqrt(grid.integrate(np.sum(res * res, axis=(0, 1))))}
    else:
        rep = sol.nonexistence_certificate(cand, grid, order)
        gi = geo.invert_metric(cand.g)
        trace_gap = float(np.max(np.abs(geo.trace_sym(rep.gradient_residual, gi) - rep.trace_residual)))
        body = {"form": "gradient", **rep.to_dict(), "trace_relation_gap": trace_gap}
    write_json(out / "soliton.json", _report("soliton", values, **body))
    print("soliton: " + ", ".join(f"{k}={body[k]}" for k in sorted(body) if not isinstance(body[k], dict)))
    return EXIT_OK


def _norms(field: np.ndarray, grid: geo.Grid) -> dict:
    return {"sup": float(np.max(np.abs(field))), "l2": math.sqrt(grid.integrate(field * field))}


def cmd_identities(values: dict) -> int:
    if not values["snapshots"]:
        raise UsageError("identities needs 'snapshots' (a trajectory directory)")
    directory = Path(values["snapshots"])
    paths = snap.list_states(directory)
    if len(paths) < 3:
        raise UsageError(f"{directory}: need at least 3 snapshots, found {len(paths)}")
    d, order = values["d"], values["difference_order"]
    report_path = directory.parent / "report.json"
    if (d is None or order is None) and report_path.exists():
        run_cfg = json.loads(report_path.read_text()).get("config", {})
        d = run_cfg.get("d") if d is None else d
        order = run_cfg.get("difference_order") if order is None else order
    if d is None:
        raise UsageError("identities needs 'd' (not found in the run report)")
    order = int(order or 2)
    states = [snap.read_state(p) for p in paths]
    grid = states[0][0]
    params = flow.FlowParams(grid.n, float(d))
    rows = []
    for i in range(1, len(states) - 1):
        traj = tuple(s for _, s in states[i - 1:i + 2])
        try:
            row = {
                "t": traj[1].t,
                "u_evolution": _norms(flow.u_evolution_residual(traj, params, grid, order), grid),
                "v_evolution": _norms(flow.v_evolution_residual(traj, params, grid, order), grid),
                "scalar_wave": _norms(flow.scalar_wave_residual(traj, params, grid, order, "nominal"), grid),
                "scalar_wave_closed": _norms(flow.scalar_wave_residual(traj, params, grid, order, "closed"), grid),
            }
        except ValueError as exc:
            raise UsageError(f"snapshots around {paths[i].name}: {exc}") from None
        rows.append(row)
    out = Path(values["output_dir"]) if values["output_dir"] else directory.parent
    write_json(out / "identities.json", _report("identities", values, d=d, difference_order=order, snapshots=rows))
    print(f"identities: {len(rows)} snapshots, max u residual "
          f"{max(r['u_evolution']['sup'] for r in rows):.3e}")
    return EXIT_OK


def cmd_convergence(values: dict) -> int:
    cfg = _run_config(values)
    out = _out_dir(values, "convergence")
    rep = dyn.convergence_study(cfg, values["refinements"])
    body = {k: getattr(rep, k) for k in (
        "resolutions", "refinement_ratio", "dts", "differences", "orders", "residual_norms",
        "residual_orders", "warnings")}
    write_json(out / "convergence.json", _report("convergence", values, **body))
    print(f"convergence: orders {rep.orders}, residual orders {rep.residual_orders}")
    return EXIT_OK


HANDLERS = {
    "exact": cmd_exact,
    "evolve": cmd_evolve,
    "stability": cmd_stability,
    "soliton": cmd_soliton,
    "identities": cmd_identities,
    "convergence": cmd_convergence,
}


def _apply_threads(values: dict) -> None:
    count = values["threads"]
    if count is None and os.environ.get("HYPFLOW_THREADS"):
        try:
            count = int(os.environ["HYPFLOW_THREADS"])
        except ValueError:
            raise UsageError(f"HYPFLOW_THREADS must be an integer, got {os.environ['HYPFLOW_THREADS']!r}") from None
    if count is not None:
        if count < 1:
            raise UsageError(f"threads must be >= 1, got {count}")
        _kernels.set_threads(count)


def main(argv=None) -> int:
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command")
        config_path = args.pop("config", None)
        config = None
        if config_path:
            try:
                config = json.loads(Path(config_path).read_text())
            except (OSError, ValueError) as exc:
                raise UsageError(f"cannot read config {config_path}: {exc}") from None
            if not isinstance(config, dict):
                raise UsageError("config file must hold a JSON object")
        values = resolve(command, config, args)
        level = getattr(logging, str(values["log_level"]).upper(), None)
        if not isinstance(level, int):
            raise UsageError(f"unknown log_level {values['log_level']!r}")
        logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        _apply_threads(values)
        return HANDLERS[command](values)
    except UsageError as exc:
        print(f"hypflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateMetric as exc:
        print(f"hypflow: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except HypflowError as exc:
        print(f"hypflow: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


run = main

if __name__ == "__main__":
    sys.exit(main())
