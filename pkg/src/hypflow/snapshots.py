"""Field snapshots on disk.

A snapshot is a JSON sidecar ``<stem>.json`` holding
{dimension, points_per_axis, box_length, component_names, time} and one raw
file ``<stem>.<component>.bin`` per component: little-endian float64 in
row-major grid order (first axis slowest).  Symmetric tensors are written as
their upper-triangle components, named like ``g_12`` with 1-based indices.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import geometry as geo
from .flow import FlowState
from .geometry import Grid


def component_names(name: str, n: int) -> list[str]:
    return [f"{name}_{i + 1}{j + 1}" for i, j in geo.sym_pairs(n)]


def write_snapshot(directory, stem: str, grid: Grid, t: float, fields: dict) -> Path:
    """Write symmetric tensor fields (name -> dense array); returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for name, T in fields.items():
        packed = geo.pack_sym(T)
        for comp, arr in zip(component_names(name, grid.n), packed):
            np.ascontiguousarray(arr, dtype="<f8").tofile(directory / f"{stem}.{comp}.bin")
            names.append(comp)
    header = {
        "dimension": grid.n,
        "points_per_axis": grid.N,
        "box_length": grid.L,
        "component_names": names,
        "time": float(t),
    }
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_snapshot(sidecar) -> tuple[Grid, float, dict]:
    """Inverse of ``write_snapshot``: (grid, time, name -> dense symmetric array)."""
    sidecar = Path(sidecar)
    header = json.loads(sidecar.read_text())
    grid = Grid(int(header["dimension"]), int(header["points_per_axis"]), float(header["box_length"]))
    stem = sidecar.name[: -len(".json")]
    comps: dict[str, list] = {}
    for comp in header["component_names"]:
        name = comp.rsplit("_", 1)[0]
        raw = np.fromfile(sidecar.parent / f"{stem}.{comp}.bin", dtype="<f8")
        if raw.size != grid.N ** grid.n:
            raise ValueError(f"{comp}: expected {grid.N ** grid.n} values, found {raw.size}")
        comps.setdefault(name, []).append(raw.reshape(grid.shape).astype(float))
    m = grid.n * (grid.n + 1) // 2
    fields = {}
    for name, parts in comps.items():
        if len(parts) != m:
            raise ValueError(f"field {name!r} has {len(parts)} components, expected {m}")
        fields[name] = geo.unpack_sym(np.stack(parts), grid.n)
    return grid, float(header["time"]), fields


def write_state(directory, stem: str, grid: Grid, state: FlowState) -> Path:
    return write_snapshot(directory, stem, grid, state.t, {"g": state.g, "k": state.k})


def read_state(sidecar) -> tuple[Grid, FlowState]:
    grid, t, fields = read_snapshot(sidecar)
    if "g" not in fields or "k" not in fields:
        raise ValueError(f"{sidecar}: snapshot lacks g or k")
    return grid, FlowState(t, fields["g"], fields["k"])


def list_states(directory) -> list[Path]:
    """Sidecars of a trajectory directory, ordered by stored time."""
    paths = sorted(Path(directory).glob("*.json"))
    keyed = []
    for p in paths:
        try:
            h = json.loads(p.read_text())
        except (OSError, ValueError):
            continue
        if isinstance(h, dict) and "component_names" in h and "time" in h:
            keyed.append((float(h["time"]), p.name, p))
    return [p for _, _, p in sorted(keyed)]
