"""Adaptive multiresolution finite-volume solver for the 2D bidomain equations."""

__version__ = "0.1.0"

from .grid import CellIndex, CellGeometry, geometry, children, parent, neighbor
from .model import ModelParams, StimulusProtocol
from .config import RunConfig, load_config, save_config

__all__ = [
    "CellIndex",
    "CellGeometry",
    "geometry",
    "children",
    "parent",
    "neighbor",
    "ModelParams",
    "StimulusProtocol",
    "RunConfig",
    "load_config",
    "save_config",
]
