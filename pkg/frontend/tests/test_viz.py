import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from mrbidomain_viz.render import render, render_run
from mrbidomain_viz.snapshot import SnapshotFormatError, load_frame


def write_snapshot(path, t=0.25, level=3, rows=None, mode="mr"):
    """Hand-built valid frame: one coarse quadrant + finer elsewhere."""
    if rows is None:
        rows = []
        # quadrant (1,0,0) as a single level-1 leaf, the rest at level 2
        rows.append((1, 0, 0, 0.6))
        for i in range(4):
            for j in range(4):
                if i < 2 and j < 2:
                    continue
                rows.append((2, i, j, 0.1 * i + 0.01 * j))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# t={t!r} L={level} mode={mode}\n")
        for (l, i, j, v) in rows:
            side = 2.0**-l
            x, y = (i + 0.5) * side, (j + 0.5) * side
            fh.write(f"{l},{i},{j},{x!r},{y!r},{side!r},{v!r},{-v!r},{1.0!r}\n")
    return path


def test_load_valid_frame(tmp_path):
    p = write_snapshot(str(tmp_path / "snapshot_000.csv"))
    frame = load_frame(p)
    assert frame.leaf_count == 13
    assert frame.area_sum() == pytest.approx(1.0, abs=1e-12)
    assert frame.t == 0.25
    img = frame.raster("v")
    assert img.shape == (8, 8)
    assert not np.any(np.isnan(img))
    # the coarse quadrant paints its constant value over a 4x4 block
    assert np.all(img[0:4, 0:4] == 0.6)


def test_missing_leaf_rejected(tmp_path):
    rows = [(1, 0, 0, 0.6)]
    for i in range(4):
        for j in range(4):
            if i < 2 and j < 2:
                continue
            rows.append((2, i, j, 0.0))
    rows.pop()  # drop one leaf
    p = write_snapshot(str(tmp_path / "snapshot_000.csv"), rows=rows)
    with pytest.raises(SnapshotFormatError) as err:
        load_frame(p)
    assert "uncovered" in str(err.value)


def test_overlapping_leaf_rejected(tmp_path):
    rows = [(1, 0, 0, 0.6), (2, 0, 0, 0.3)]
    for i in range(4):
        for j in range(4):
            if i < 2 and j < 2:
                continue
            rows.append((2, i, j, 0.0))
    p = write_snapshot(str(tmp_path / "snapshot_000.csv"), rows=rows)
    with pytest.raises(SnapshotFormatError) as err:
        load_frame(p)
    assert "more than once" in str(err.value)


def test_malformed_row_reports_line(tmp_path):
    p = tmp_path / "snapshot_000.csv"
    p.write_text("# t=0.0 L=2 mode=mr\n1,2,3\n")
    with pytest.raises(SnapshotFormatError) as err:
        load_frame(str(p))
    assert ":2:" in str(err.value)


def test_header_required(tmp_path):
    p = tmp_path / "snapshot_000.csv"
    p.write_text("0,0,0,0.5,0.5,1.0,0,0,1\n")
    with pytest.raises(SnapshotFormatError):
        load_frame(str(p))


def test_unknown_component_rejected(tmp_path):
    p = write_snapshot(str(tmp_path / "snapshot_000.csv"))
    frame = load_frame(p)
    with pytest.raises(SnapshotFormatError):
        frame.raster("potential")


def test_render_quiescent_uniform_color(tmp_path):
    rows = [(2, i, j, 3.5) for i in range(4) for j in range(4)]
    p = write_snapshot(str(tmp_path / "snapshot_000.csv"), rows=rows, level=2)
    frame = load_frame(p)
    img = frame.raster("v")
    assert np.all(img == 3.5)
    out = render(frame, "v", str(tmp_path / "out.png"))
    assert os.path.getsize(out) > 0


def test_render_run_common_scale_and_overlay(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    write_snapshot(str(run / "snapshot_000.csv"), t=0.0)
    write_snapshot(str(run / "snapshot_001.csv"), t=0.5)
    written = render_run(str(run), component="u_e", mesh_overlay=True)
    assert len(written) == 2
    for w in written:
        assert os.path.getsize(w) > 0


def test_render_determinism(tmp_path):
    p = write_snapshot(str(tmp_path / "snapshot_000.csv"))
    frame = load_frame(p)
    a = str(tmp_path / "a.png")
    b = str(tmp_path / "b.png")
    render(frame, "v", a, vmin=0.0, vmax=1.0)
    render(frame, "v", b, vmin=0.0, vmax=1.0)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_cli(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    write_snapshot(str(run / "snapshot_000.csv"))
    r = subprocess.run(
        [sys.executable, "-m", "mrbidomain_viz.cli", str(run),
         "--component", "w", "--mesh-overlay"],
        capture_output=True, text=True, timeout=120,
    )
    assert r.returncode == 0, r.stderr
    assert os.path.exists(os.path.join(str(run), "render", "snapshot_000_w.png"))


def test_cli_rejects_broken_run(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    rows = [(1, 0, 0, 0.6)]  # covers only a quadrant
    write_snapshot(str(run / "snapshot_000.csv"), rows=rows)
    r = subprocess.run(
        [sys.executable, "-m", "mrbidomain_viz.cli", str(run)],
        capture_output=True, text=True, timeout=120,
    )
    assert r.returncode == 1
    assert "uncovered" in r.stderr


@pytest.mark.skipif(shutil.which("mrbidomain") is None,
                    reason="solver CLI not installed")
def test_renders_every_snapshot_of_a_desk_run(tmp_path):
    """End-to-end: a small solver run through its public CLI, then render
    every emitted snapshot for every component."""
    cfg = tmp_path / "mini.ini"
    cfg.write_text(
        "[run]\nmode = mr\nfinest_level = 4\nmin_level = 2\n"
        "t_final = 0.2\nsnapshot_times = 0.0,0.1,0.2\n"
    )
    out = str(tmp_path / "run")
    r = subprocess.run(
        ["mrbidomain", "simulate", "--config", str(cfg), "--out", out],
        capture_output=True, text=True, timeout=540,
    )
    assert r.returncode == 0, r.stderr
    snaps = [n for n in os.listdir(out) if n.startswith("snapshot_")]
    assert len(snaps) == 3
    for comp in ("v", "u_e", "w"):
        written = render_run(out, component=comp, mesh_overlay=True)
        assert len(written) == len(snaps)
