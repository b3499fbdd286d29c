"""Graded dynamic quadtree of cell averages with threshold-driven adaptation.

Nodes are keyed by (level, i, j) and hold the triple (v, ue, w). Internal
nodes carry the projection (mean) of their children; leaves form a partition
of the unit square. Missing same-level neighbors needed by flux or
prediction stencils are resolved on demand as virtual values, predicted
recursively from the deepest real ancestor data; indices beyond the domain
mirror back inside, consistent with the no-flux boundary.

Structure invariants maintained by every public operation: quads are always
complete (4 children or none), edge-adjacent leaves differ by at most one
level, leaves never sit below min_level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import mirror_index
from .mr import MRConfig

NCOMP = 3  # v, ue, w

#: child offsets in storage order (e1, e2)
_OFFS = ((0, 0), (1, 0), (0, 1), (1, 1))


@dataclass(frozen=True)
class CompressionMetrics:
    eta: float
    leaf_count: int
    fine_count: int


class MRTree:
    def __init__(self, cfg: MRConfig):
        self.cfg = cfg
        self.data: dict[tuple, list] = {}
        self.leaves: set[tuple] = set()
        self._cache: dict[tuple, tuple] = {}

    # ------------------------------------------------------------------ basic

    def touch(self) -> None:
        """Invalidate resolved virtual values after any data mutation."""
        self._cache.clear()

    def leaf_keys(self) -> list[tuple]:
        return sorted(self.leaves)

    def max_leaf_level(self) -> int:
        return max(k[0] for k in self.leaves)

    def min_leaf_level(self) -> int:
        return min(k[0] for k in self.leaves)

    def levels_present(self) -> list[int]:
        return sorted({k[0] for k in self.leaves})

    def leaf_covering(self, l: int, i: int, j: int):
        """The leaf whose region contains cell (l, i, j), or None."""
        while l >= 0:
            key = (l, i, j)
            if key in self.leaves:
                return key
            l, i, j = l - 1, i // 2, j // 2
        return None

    def area_sum(self) -> float:
        import math

        return math.fsum(4.0 ** (-k[0]) for k in self.leaves)

    # ------------------------------------------------------------ resolution

    def value(self, l: int, i: int, j: int) -> tuple:
        """Cell average triple at (l, i, j): stored, mirrored, or predicted."""
        n = 1 << l
        if not (0 <= i < n):
            i = mirror_index(i, n)
        if not (0 <= j < n):
            j = mirror_index(j, n)
        key = (l, i, j)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        d = self.data.get(key)
        if d is not None:
            t = (d[0], d[1], d[2])
            self._cache[key] = t
            return t
        if l == 0:
            raise KeyError("root node missing")
        quad = self._predict_quad(l - 1, i // 2, j // 2)
        self._cache.update(quad)
        return quad[key]

    def _stencil(self, l: int, i: int, j: int) -> list:
        """5x5 neighborhood of (l, i, j) as value triples."""
        return [[self.value(l, i + di, j + dj) for dj in (-2, -1, 0, 1, 2)]
                for di in (-2, -1, 0, 1, 2)]

    def _predict_quad(self, pl: int, pi: int, pj: int) -> dict:
        """Predicted averages of the four children of parent (pl, pi, pj)."""
        st = self._stencil(pl, pi, pj)
        g1, g2 = self.cfg.gamma
        out = {}
        vals = [[st[a][b] for b in range(5)] for a in range(5)]
        pred = [None] * 4
        for c in range(NCOMP):
            s = [[vals[a][b][c] for b in range(5)] for a in range(5)]
            qx = g1 * (s[3][2] - s[1][2]) + g2 * (s[4][2] - s[0][2])
            qy = g1 * (s[2][3] - s[2][1]) + g2 * (s[2][4] - s[2][0])
            qxy = 0.0
            for n_, gn in ((1, g1), (2, g2)):
                for p_, gp in ((1, g1), (2, g2)):
                    qxy += gn * gp * (s[2 + n_][2 + p_] - s[2 + n_][2 - p_]
                                      - s[2 - n_][2 + p_] + s[2 - n_][2 - p_])
            base = s[2][2]
            comp = (base + qx + qy + qxy, base - qx + qy - qxy,
                    base + qx - qy - qxy, base - qx - qy + qxy)
            for k in range(4):
                if pred[k] is None:
                    pred[k] = []
                pred[k].append(comp[k])
        for k, (e1, e2) in enumerate(_OFFS):
            out[(pl + 1, 2 * pi + e1, 2 * pj + e2)] = tuple(pred[k])
        return out

    # ------------------------------------------------------------ transforms

    def project_up(self) -> None:
        """Refresh every internal node as the mean of its children (fine to coarse)."""
        by_level: dict[int, list] = {}
        for key in self.data:
            if key not in self.leaves:
                by_level.setdefault(key[0], []).append(key)
        for l in sorted(by_level, reverse=True):
            for (pl, pi, pj) in by_level[l]:
                c = [self.data[(pl + 1, 2 * pi + e1, 2 * pj + e2)] for e1, e2 in _OFFS]
                d = self.data[(pl, pi, pj)]
                for k in range(NCOMP):
                    d[k] = 0.25 * ((c[0][k] + c[1][k]) + (c[2][k] + c[3][k]))
        self.touch()

    def child_residuals(self, parent_key: tuple) -> np.ndarray:
        """Residuals (4, NCOMP) of true child averages minus predictions."""
        pl, pi, pj = parent_key
        pred = self._predict_quad(pl, pi, pj)
        out = np.empty((4, NCOMP))
        for k, (e1, e2) in enumerate(_OFFS):
            ck = (pl + 1, 2 * pi + e1, 2 * pj + e2)
            true = self.data[ck]
            pck = pred[ck]
            for c in range(NCOMP):
                out[k, c] = true[c] - pck[c]
        return out

    def component_scales(self) -> tuple:
        """Global max-norm per component over the leaves (floored at 1e-30)."""
        best = [1e-30] * NCOMP
        for key in self.leaves:
            d = self.data[key]
            for c in range(NCOMP):
                a = abs(d[c])
                if a > best[c]:
                    best[c] = a
        return tuple(best)

    def significance_map(self) -> dict:
        """True for parents whose normalized details reach the child-level tolerance.

        Detail magnitude is the maximum over the three stored offsets and
        components, each component scaled by its global max-norm.
        """
        from .mr import threshold_for_level

        scales = self.component_scales()
        sig = {}
        for key in self.data:
            if key in self.leaves:
                continue
            res = self.child_residuals(key)
            mag = 0.0
            for k in (1, 2, 3):  # stored offsets E* = (1,0), (0,1), (1,1)
                for c in range(NCOMP):
                    m = abs(res[k, c]) / scales[c]
                    if m > mag:
                        mag = m
            child_level = key[0] + 1
            sig[key] = mag >= threshold_for_level(child_level, self.cfg)
        return sig

    # ------------------------------------------------------- structure edits

    def refine_leaf(self, key: tuple) -> None:
        """Split a leaf into four children carrying predicted averages."""
        l, i, j = key
        if key not in self.leaves:
            raise ValueError(f"{key} is not a leaf")
        if l >= self.cfg.finest_level:
            raise ValueError(f"cannot refine leaf {key} beyond the finest level")
        quad = self._predict_quad(l, i, j)
        for ck, vals in quad.items():
            self.data[ck] = list(vals)
            self.leaves.add(ck)
        self.leaves.discard(key)
        self.touch()

    def _delete_children(self, parent_key: tuple) -> None:
        pl, pi, pj = parent_key
        for e1, e2 in _OFFS:
            ck = (pl + 1, 2 * pi + e1, 2 * pj + e2)
            self.leaves.discard(ck)
            del self.data[ck]
        self.leaves.add(parent_key)
        self.touch()

    def _coarsenable(self, parent_key: tuple) -> bool:
        """All four children are leaves and deletion keeps the grading."""
        pl, pi, pj = parent_key
        if pl + 1 <= self.cfg.min_level:
            return False
        for e1, e2 in _OFFS:
            if (pl + 1, 2 * pi + e1, 2 * pj + e2) not in self.leaves:
                return False
        n = 1 << pl
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = pi + di, pj + dj
            if not (0 <= ni < n and 0 <= nj < n):
                continue
            nb = (pl, ni, nj)
            if nb in self.leaves or nb not in self.data:
                continue
            # internal neighbor: its children along the shared edge must be leaves
            for e1, e2 in _OFFS:
                ck = (pl + 1, 2 * ni + e1, 2 * nj + e2)
                touches = (
                    (di == 1 and e1 == 0) or (di == -1 and e1 == 1)
                    or (dj == 1 and e2 == 0) or (dj == -1 and e2 == 1)
                )
                if touches and ck in self.data and ck not in self.leaves:
                    return False
        return True

    def coarsen_by_threshold(self, significance: dict | None = None) -> int:
        """Delete leaf quads whose parent details are below tolerance.

        Cascades fine-to-coarse until stable; returns the number of deleted
        quads. Applying it twice changes nothing the second time.
        """
        if significance is None:
            self.project_up()
            significance = self.significance_map()
        removed = 0
        changed = True
        while changed:
            changed = False
            parents = sorted(
                {k for k in self.data if k not in self.leaves},
                key=lambda k: -k[0],
            )
            for pk in parents:
                if significance.get(pk, True):
                    continue
                if self._coarsenable(pk):
                    self._delete_children(pk)
                    removed += 1
                    changed = True
        return removed

    def add_safety_zone(self, significance: dict | None = None) -> int:
        """Refine every leaf (below the finest level) whose parent details are
        significant; returns the number of refined leaves."""
        if significance is None:
            self.project_up()
            significance = self.significance_map()
        refined = 0
        for pk, sig in sorted(significance.items()):
            if not sig:
                continue
            pl, pi, pj = pk
            if pl + 1 >= self.cfg.finest_level:
                continue
            for e1, e2 in _OFFS:
                ck = (pl + 1, 2 * pi + e1, 2 * pj + e2)
                if ck in self.leaves:
                    self.refine_leaf(ck)
                    refined += 1
        return refined

    def ensure_graded(self) -> int:
        """Refine coarse leaves until edge-adjacent leaves differ by <= 1 level."""
        refined = 0
        changed = True
        while changed:
            changed = False
            for key in sorted(self.leaves, key=lambda k: -k[0]):
                l, i, j = key
                if l <= 1:
                    continue
                n = 1 << l
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if not (0 <= ni < n and 0 <= nj < n):
                        continue
                    cover = self.leaf_covering(l, ni, nj)
                    if cover is not None and l - cover[0] > 1:
                        self.refine_leaf(cover)
                        refined += 1
                        changed = True
        return refined

    def materialize_virtual_leaves(self) -> int:
        """Resolve the two-wide same-level cousin halo of every leaf.

        Values live in the resolution cache until the next mutation; returns
        the number of virtual cells resolved.
        """
        for (l, i, j) in list(self.leaves):
            for di in range(-2, 3):
                for dj in range(-2, 3):
                    self.value(l, i + di, j + dj)
        return sum(1 for k in self._cache if k not in self.data)

    def remesh(self) -> dict:
        """Full adaptation pass: project, threshold-coarsen, safety zone, grading."""
        self.project_up()
        significance = self.significance_map()
        removed = self.coarsen_by_threshold(significance)
        refined = self.add_safety_zone(significance)
        graded = self.ensure_graded()
        self.project_up()
        return {"removed_quads": removed, "safety_refined": refined, "grading_refined": graded}

    # ------------------------------------------------------------- metrics

    def compression(self) -> CompressionMetrics:
        L = self.cfg.finest_level
        n_fine = 4**L
        leaf_count = len(self.leaves)
        eta = n_fine / (2.0 ** (-(L + 1)) * n_fine + leaf_count)
        return CompressionMetrics(eta=eta, leaf_count=leaf_count, fine_count=n_fine)

    def grading_violations(self) -> list:
        """Exhaustive neighbor scan; empty list when the grading invariant holds."""
        bad = []
        for (l, i, j) in self.leaves:
            n = 1 << l
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = i + di, j + dj
                if not (0 <= ni < n and 0 <= nj < n):
                    continue
                cover = self.leaf_covering(l, ni, nj)
                if cover is not None and abs(l - cover[0]) > 1:
                    bad.append(((l, i, j), cover))
        return bad

    def orphan_nodes(self) -> list:
        """Non-root nodes whose parent is missing (always empty by construction)."""
        out = []
        for (l, i, j) in self.data:
            if l > 0 and (l - 1, i // 2, j // 2) not in self.data:
                out.append((l, i, j))
        return out

    # ------------------------------------------------------------- decoding

    def decode_uniform(self) -> np.ndarray:
        """Reconstruct the (NCOMP, 2^L, 2^L) finest-level fields by prediction.

        Details absent from the tree are taken as zero; stored node averages
        override predictions wherever a node exists.
        """
        from .mr import predict_level

        lmin = self.cfg.min_level
        L = self.cfg.finest_level
        by_level: dict[int, list] = {}
        for key in self.data:
            by_level.setdefault(key[0], []).append(key)
        n0 = 1 << lmin
        arr = np.empty((NCOMP, n0, n0))
        for (l, i, j) in by_level.get(lmin, []):
            d = self.data[(l, i, j)]
            for c in range(NCOMP):
                arr[c, i, j] = d[c]
        for l in range(lmin, L):
            nxt = np.empty((NCOMP, 2 * arr.shape[1], 2 * arr.shape[1]))
            for c in range(NCOMP):
                nxt[c] = predict_level(arr[c], self.cfg.gamma)
            for (ll, i, j) in by_level.get(l + 1, []):
                d = self.data[(ll, i, j)]
                for c in range(NCOMP):
                    nxt[c, i, j] = d[c]
            arr = nxt
        return arr


def build_full_tree(cfg: MRConfig, v_fine: np.ndarray, ue_fine: np.ndarray,
                    w_fine: np.ndarray) -> MRTree:
    """Fully refined tree at the finest level carrying the given fields."""
    L = cfg.finest_level
    n = 1 << L
    if v_fine.shape != (n, n):
        raise ValueError(f"expected ({n},{n}) fields for finest level {L}")
    tree = MRTree(cfg)
    for i in range(n):
        vi, ui, wi = v_fine[i], ue_fine[i], w_fine[i]
        for j in range(n):
            key = (L, i, j)
            tree.data[key] = [float(vi[j]), float(ui[j]), float(wi[j])]
            tree.leaves.add(key)
    for l in range(L - 1, -1, -1):
        m = 1 << l
        for i in range(m):
            for j in range(m):
                tree.data[(l, i, j)] = [0.0, 0.0, 0.0]
    tree.project_up()
    return tree


def build_initial_tree(cfg: MRConfig, v_fine, ue_fine, w_fine,
                       adapt: bool = True) -> MRTree:
    """Initial adaptive tree: full refinement, then one adaptation pass."""
    tree = build_full_tree(cfg, v_fine, ue_fine, w_fine)
    if adapt:
        tree.remesh()
    return tree
