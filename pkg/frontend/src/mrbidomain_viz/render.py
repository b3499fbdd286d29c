"""Heatmap rendering of snapshot frames.

Each leaf paints its rectangle at the finest-level raster resolution, so the
image shows the piecewise-constant fields exactly, without interpolation.
The color scale is fixed across all snapshots of a run so frames are
comparable; an optional overlay draws the leaf boundaries.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .snapshot import COMPONENTS, SnapshotFrame, load_frame  # noqa: E402

_LABEL = {"v": "transmembrane potential v",
          "u_e": "extracellular potential u_e",
          "w": "recovery variable w"}


def render(frame: SnapshotFrame, component: str, out_path: str,
           vmin=None, vmax=None, mesh_overlay: bool = False, dpi: int = 150) -> str:
    img = frame.raster(component)
    lo = float(img.min()) if vmin is None else vmin
    hi = float(img.max()) if vmax is None else vmax
    if hi <= lo:
        hi = lo + 1.0
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(img.T, origin="lower", extent=(0, 1, 0, 1),
                   vmin=lo, vmax=hi, cmap="viridis", interpolation="nearest")
    if mesh_overlay:
        xs, ys, sides = frame.rectangles()
        for x, y, s in zip(xs, ys, sides):
            ax.add_patch(plt.Rectangle((x, y), s, s, fill=False,
                                       edgecolor="white", linewidth=0.3, alpha=0.6))
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"{_LABEL.get(component, component)}  t={frame.t:.4g}  "
                 f"leaves={frame.leaf_count}")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path


def list_run_snapshots(run_dir: str):
    names = sorted(n for n in os.listdir(run_dir)
                   if n.startswith("snapshot_") and n.endswith(".csv"))
    if not names:
        raise FileNotFoundError(f"no snapshot_*.csv files in {run_dir}")
    return [os.path.join(run_dir, n) for n in names]


def render_run(run_dir: str, component: str = "v", out_dir: str | None = None,
               mesh_overlay: bool = False) -> list:
    """Render every snapshot of a run with a common color scale."""
    paths = list_run_snapshots(run_dir)
    frames = [load_frame(p) for p in paths]
    vmin = min(float(f.values[component].min()) for f in frames)
    vmax = max(float(f.values[component].max()) for f in frames)
    out_dir = out_dir or os.path.join(run_dir, "render")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for path, frame in zip(paths, frames):
        stem = os.path.splitext(os.path.basename(path))[0]
        safe = component.replace("_", "")
        out = os.path.join(out_dir, f"{stem}_{safe}.png")
        written.append(render(frame, component, out, vmin=vmin, vmax=vmax,
                              mesh_overlay=mesh_overlay))
    return written
