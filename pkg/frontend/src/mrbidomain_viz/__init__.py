"""Rendering of adaptive-solver snapshot files as heatmap images."""

__version__ = "0.1.0"

from .snapshot import SnapshotFrame, load_frame
from .render import render, render_run

__all__ = ["SnapshotFrame", "load_frame", "render", "render_run"]
