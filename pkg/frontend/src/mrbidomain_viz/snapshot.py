"""Snapshot file parsing and tiling validation.

Format (one file per output time):
    # t=<time> L=<level> mode=<mode>
    l,i,j,x_center,y_center,side,v,u_e,w

The leaf rectangles must tile the unit square exactly once; validation
rasterizes every leaf onto the finest-level grid and rejects files whose
cells are covered zero or multiple times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COMPONENTS = ("v", "u_e", "w")
_COMP_COLUMN = {"v": 6, "u_e": 7, "w": 8}


class SnapshotFormatError(ValueError):
    pass


@dataclass
class SnapshotFrame:
    t: float
    level: int
    mode: str
    l: np.ndarray
    i: np.ndarray
    j: np.ndarray
    values: dict  # component name -> per-leaf array

    @property
    def leaf_count(self) -> int:
        return self.l.size

    def area_sum(self) -> float:
        import math

        return float(math.fsum(float(4.0 ** -lv) for lv in self.l))

    def coverage(self) -> np.ndarray:
        """Times each finest-level cell is covered by a leaf (must be 1)."""
        n = 1 << self.level
        cover = np.zeros((n, n), dtype=np.int32)
        for lv, ii, jj in zip(self.l, self.i, self.j):
            f = 1 << (self.level - int(lv))
            cover[int(ii) * f:(int(ii) + 1) * f, int(jj) * f:(int(jj) + 1) * f] += 1
        return cover

    def validate(self) -> None:
        cover = self.coverage()
        missing = int(np.count_nonzero(cover == 0))
        overlap = int(np.count_nonzero(cover > 1))
        if missing or overlap:
            raise SnapshotFormatError(
                f"leaves do not tile the domain: {missing} fine cells uncovered, "
                f"{overlap} covered more than once"
            )

    def raster(self, component: str) -> np.ndarray:
        """Filled-block raster of one component at the finest resolution."""
        if component not in _COMP_COLUMN:
            raise SnapshotFormatError(f"unknown component {component!r}; choose from {COMPONENTS}")
        n = 1 << self.level
        img = np.empty((n, n))
        img.fill(np.nan)
        vals = self.values[component]
        for lv, ii, jj, val in zip(self.l, self.i, self.j, vals):
            f = 1 << (self.level - int(lv))
            img[int(ii) * f:(int(ii) + 1) * f, int(jj) * f:(int(jj) + 1) * f] = val
        return img

    def rectangles(self):
        """(x, y, side) of every leaf, for mesh overlays."""
        side = np.ldexp(1.0, -self.l.astype(int))
        return self.i * side, self.j * side, side


def load_frame(path: str) -> SnapshotFrame:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# ") or "t=" not in header:
            raise SnapshotFormatError(f"{path}:1: missing snapshot header")
        meta = {}
        for tok in header[2:].split():
            if "=" not in tok:
                raise SnapshotFormatError(f"{path}:1: malformed header token {tok!r}")
            k, v = tok.split("=", 1)
            meta[k] = v
        try:
            t = float(meta["t"])
            level = int(meta["L"])
        except (KeyError, ValueError) as exc:
            raise SnapshotFormatError(f"{path}:1: bad header ({exc})") from exc
        l_, i_, j_ = [], [], []
        cols = {name: [] for name in COMPONENTS}
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise SnapshotFormatError(f"{path}:{lineno}: expected 9 columns, got {len(parts)}")
            try:
                lv, ii, jj = int(parts[0]), int(parts[1]), int(parts[2])
                vals = [float(parts[c]) for c in (6, 7, 8)]
            except ValueError as exc:
                raise SnapshotFormatError(f"{path}:{lineno}: {exc}") from exc
            if lv < 0 or lv > level or not (0 <= ii < (1 << lv)) or not (0 <= jj < (1 << lv)):
                raise SnapshotFormatError(f"{path}:{lineno}: cell ({lv},{ii},{jj}) out of range")
            l_.append(lv); i_.append(ii); j_.append(jj)
            for name, val in zip(COMPONENTS, vals):
                cols[name].append(val)
    if not l_:
        raise SnapshotFormatError(f"{path}: no leaf rows")
    frame = SnapshotFrame(
        t=t, level=level, mode=meta.get("mode", "?"),
        l=np.array(l_), i=np.array(i_), j=np.array(j_),
        values={k: np.array(v) for k, v in cols.items()},
    )
    frame.validate()
    return frame
