import json

import numpy as np
import pytest

from hypflow import dynamics as dy
from hypflow import geometry as geo
from hypflow import snapshots as snap


def test_component_names():
    assert snap.component_names("g", 2) == ["g_11", "g_12", "g_22"]
    assert snap.component_names("k", 3) == ["k_11", "k_12", "k_13", "k_22", "k_23", "k_33"]


def test_state_roundtrip(tmp_path):
    grid = geo.Grid(3, 8, 5.0)
    s = dy.initial_state({"kind": "conformal"}, grid)
    s.t = 0.375
    side = snap.write_state(tmp_path, "step_000003", grid, s)
    header = json.loads(side.read_text())
    assert header == {"dimension": 3, "points_per_axis": 8, "box_length": 5.0, "time": 0.375,
                      "component_names": snap.component_names("g", 3) + snap.component_names("k", 3)}
    raw = (tmp_path / "step_000003.g_12.bin").read_bytes()
    assert len(raw) == 8 * 8 ** 3
    assert np.array_equal(np.frombuffer(raw, dtype="<f8").reshape(grid.shape), s.g[0, 1])
    g2, s2 = snap.read_state(side)
    assert (g2.n, g2.N, g2.L) == (3, 8, 5.0)
    assert s2.t == 0.375 and np.array_equal(s2.g, s.g) and np.array_equal(s2.k, s.k)


def test_read_rejects_truncated(tmp_path):
    grid = geo.Grid(2, 8)
    side = snap.write_snapshot(tmp_path, "a", grid, 0.0, {"g": geo.identity_field(grid)})
    (tmp_path / "a.g_11.bin").write_bytes(b"\0" * 16)
    with pytest.raises(ValueError):
        snap.read_snapshot(side)


def test_read_state_needs_both_fields(tmp_path):
    grid = geo.Grid(2, 8)
    side = snap.write_snapshot(tmp_path, "a", grid, 0.0, {"g": geo.identity_field(grid)})
    with pytest.raises(ValueError):
        snap.read_state(side)


def test_list_states_orders_by_time(tmp_path):
    grid = geo.Grid(2, 8)
    for stem, t in (("b", 0.2), ("a", 0.3), ("c", 0.1)):
        s = dy.initial_state({"kind": "flat"}, grid)
        s.t = t
        snap.write_state(tmp_path, stem, grid, s)
    (tmp_path / "report.json").write_text('{"other": 1}')
    assert [p.name for p in snap.list_states(tmp_path)] == ["c.json", "b.json", "a.json"]
