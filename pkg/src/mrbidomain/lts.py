"""Time stepping on the adaptive leaf mesh.

Two drivers share one flux machinery: a global-step advance (every leaf uses
the finest-level dt) and the recursive local-time-stepping cycle where level
l advances with dt_l = 2^(L-l) dt and all levels meet after one step of the
coarsest active level.

Fluxes at faces between same-level leaves use the standard two-point form
(plus the tangential cross term); faces against a coarser neighbor are
computed at the finer level against virtual-leaf values and accumulated,
time-weighted, into a per-face ledger that the coarse side consumes at the
end of its window. This pairing keeps sum(|K| v) exact to roundoff.

The extracellular system is assembled over the leaves (deterministic sorted
order). Interface couplings in the matrix use the harmonic two-point
transmissibility with the true center distance, which keeps the matrix
symmetric; cross terms are gated per vertex to uniform same-level quads for
the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import model as md
from . import fv
from .elliptic import LinearSystem, solve_zero_mean
from .mr import MRConfig
from .tree import build_initial_tree

DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class LtsSchedule:
    dt_finest: float
    finest_level: int
    remesh_interval: int = 2
    elliptic_cadence: str = "every_fine_step"  # or "sync_only"

    def __post_init__(self):
        if self.elliptic_cadence not in ("every_fine_step", "sync_only"):
            raise ValueError(f"unknown elliptic cadence {self.elliptic_cadence!r}")

    def dt_for_level(self, l: int) -> float:
        if not (0 <= l <= self.finest_level):
            raise ValueError(f"level {l} outside [0, {self.finest_level}]")
        return (1 << (self.finest_level - l)) * self.dt_finest


def dt_for_level(l: int, schedule: LtsSchedule) -> float:
    return schedule.dt_for_level(l)


class TreeEngine:
    """Adaptive-mesh driver for modes `mr` (global dt) and `mr-lts`."""

    def __init__(self, p: md.ModelParams, proto: md.StimulusProtocol, cfg: MRConfig,
                 full_tensor: bool = True, reaction: bool = True,
                 solver_tol: float = 1.0e-8, blowup_factor: float = 25.0,
                 force_full_tree: bool = False,
                 elliptic_cadence: str = "every_fine_step",
                 reaction_substeps: bool = True):
        self.p = p
        self.proto = proto
        self.cfg = cfg
        self.full_tensor = full_tensor
        self.reaction = reaction
        self.solver_tol = solver_tol
        self.blowup_factor = blowup_factor
        self.force_full_tree = force_full_tree
        self.elliptic_cadence = elliptic_cadence
        self.reaction_substeps = reaction_substeps

        L = cfg.finest_level
        n = 1 << L
        h = 1.0 / n
        xs = (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        v0, w0 = md.initial_state(X, Y, proto)
        areas = np.full(n * n, h * h)
        i_app0 = md.applied_current(0.0, X, Y, proto, weights=areas.reshape(n, n))
        A0 = fv.elliptic_operator(n, p, full_tensor)
        b0 = fv.elliptic_rhs(v0, p, i_app0, full_tensor)
        ue0 = solve_zero_mean(LinearSystem(A0, b0, areas, tol=solver_tol)).reshape(n, n)
        self.initial_max_dt = fv.cfl_max_dt(v0, w0, i_app0, p, h, reaction)

        self.tree = build_initial_tree(cfg, v0, ue0, w0, adapt=not force_full_tree)
        self.fine_steps = 0          # elapsed time in dt_finest units (exact integers)
        self.steps_since_remesh = 0
        self.compatibility_log: list[float] = []
        self.max_abs_v = float(np.max(np.abs(v0)))
        self.weights_i = fv.direction_weights(p, md.INTRA, full_tensor)
        self.weights_e = fv.direction_weights(p, md.EXTRA, full_tensor)
        self.weights_ie = tuple(a + b for a, b in zip(self.weights_i, self.weights_e))
        self._rebuild_plan()

    # ------------------------------------------------------------------ plan

    def _rebuild_plan(self) -> None:
        keys = self.tree.leaf_keys()
        index = {k: r for r, k in enumerate(keys)}
        levels = np.array([k[0] for k in keys])
        side = np.ldexp(1.0, -levels)
        xc = (np.array([k[1] for k in keys]) + 0.5) * side
        yc = (np.array([k[2] for k in keys]) + 0.5) * side
        self.keys = keys
        self.index = index
        self.leaf_levels = levels
        self.leaf_area = side * side
        self.leaf_x = xc
        self.leaf_y = yc
        self.by_level = {l: [k for k in keys if k[0] == l] for l in sorted(set(levels.tolist()))}
        self.A_ie = self._assemble_leaf_operator(self.weights_ie)

    def _gather(self, comp: int) -> np.ndarray:
        data = self.tree.data
        return np.array([data[k][comp] for k in self.keys])

    def _scatter(self, comp: int, vec: np.ndarray) -> None:
        data = self.tree.data
        for r, k in enumerate(self.keys):
            data[k][comp] = float(vec[r])
        self.tree.touch()

    # ------------------------------------------------------- leaf matrices

    def _vertex_cells(self, l: int, a: int, b: int):
        """Mirrored same-level cell positions around vertex (a, b) of level l."""
        from .grid import mirror_index

        n = 1 << l
        cells = []
        for ci in (a - 1, a):
            for cj in (b - 1, b):
                cells.append((l, mirror_index(ci, n), mirror_index(cj, n)))
        return cells

    def _assemble_leaf_operator(self, weights) -> sp.csr_matrix:
        wx, wy, cross = weights
        leaves = self.tree.leaves
        data = self.tree.data
        index = self.index
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        q = 0.25 * cross
        for key in self.keys:
            l, i, j = key
            n = 1 << l
            K = index[key]
            for di, dj in ((1, 0), (0, 1)):
                ni, nj = i + di, j + dj
                if ni >= n or nj >= n:
                    continue
                nb = (l, ni, nj)
                if nb in leaves:
                    w = wx if di else wy
                    Lr = index[nb]
                    add(K, K, w); add(K, Lr, -w); add(Lr, Lr, w); add(Lr, K, -w)
                    if cross != 0.0:
                        # face vertices ordered by the tangential coordinate
                        if di:
                            v_lo, v_hi = (i + 1, j), (i + 1, j + 1)
                        else:
                            v_lo, v_hi = (i, j + 1), (i + 1, j + 1)
                        for vert, s in ((v_hi, 1.0), (v_lo, -1.0)):
                            cells = self._vertex_cells(l, *vert)
                            if all(c_ in leaves for c_ in cells):
                                for c_ in cells:
                                    m = index[c_]
                                    add(K, m, -s * q)
                                    add(Lr, m, s * q)
                            else:
                                # vertex inactive: tangential value falls back to
                                # the face mean (uK + uL)/2
                                for m, coef in ((K, 0.5), (Lr, 0.5)):
                                    add(K, m, -s * cross * coef)
                                    add(Lr, m, s * cross * coef)
            # interface faces, owned by the coarse side
            for di, dj in DIRS:
                ni, nj = i + di, j + dj
                if not (0 <= ni < n and 0 <= nj < n):
                    continue
                nb = (l, ni, nj)
                if nb in data and nb not in leaves:
                    w = wx if di else wy
                    wif = (2.0 / 3.0) * w
                    for ck in _edge_children(nb, (-di, -dj)):
                        if ck not in leaves:
                            raise RuntimeError(f"interface against non-leaf {ck}: grading violated")
                        f = index[ck]
                        add(K, K, wif); add(K, f, -wif); add(f, f, wif); add(f, K, -wif)
        m = len(self.keys)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        A = 0.5 * (A + A.T)
        A = A.tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A

    # ------------------------------------------------------- explicit sweep

    def _canonical_flux(self, l, fi_lo, fj_lo, axis, comp, weights, cache):
        """Flux in +axis orientation across the face whose lower cell is
        (l, fi_lo, fj_lo); virtual neighbor values resolved as needed."""
        fid = (l, fi_lo, fj_lo, axis, comp)
        hit = cache.get(fid)
        if hit is not None:
            return hit
        wx, wy, cross = weights
        val = self.tree.value
        if axis == 0:
            uK = val(l, fi_lo, fj_lo)[comp]
            uN = val(l, fi_lo + 1, fj_lo)[comp]
            w = wx
        else:
            uK = val(l, fi_lo, fj_lo)[comp]
            uN = val(l, fi_lo, fj_lo + 1)[comp]
            w = wy
        F = w * (uN - uK)
        if cross != 0.0:
            if axis == 0:
                v_hi = self._vertex_value(l, fi_lo + 1, fj_lo + 1, comp)
                v_lo = self._vertex_value(l, fi_lo + 1, fj_lo, comp)
            else:
                v_hi = self._vertex_value(l, fi_lo + 1, fj_lo + 1, comp)
                v_lo = self._vertex_value(l, fi_lo, fj_lo + 1, comp)
            F = F + cross * (v_hi - v_lo)
        cache[fid] = F
        return F

    def _vertex_value(self, l, a, b, comp):
        val = self.tree.value
        amm = val(l, a - 1, b - 1)[comp]
        apm = val(l, a, b - 1)[comp]
        amp = val(l, a - 1, b)[comp]
        app = val(l, a, b)[comp]
        return 0.25 * ((amm + apm) + (amp + app))

    def _stash_level(self, l: int, dt_l: float, comp: int, weights,
                     ledger: dict, flux_cache: dict):
        """Evaluate the level-l face fluxes at its window start.

        Returns (face_values, deferred) where face_values[key] holds the four
        outward fluxes (E, W, N, S; None where deferred to the ledger) and
        deferred lists (key, slot, face_id) entries to fill at update time.
        """
        leaves = self.tree.leaves
        data = self.tree.data
        face_values = {}
        deferred = []
        for key in self.by_level.get(l, []):
            _, i, j = key
            n = 1 << l
            slots = [0.0, 0.0, 0.0, 0.0]
            for slot, (di, dj) in enumerate(DIRS):
                ni, nj = i + di, j + dj
                if not (0 <= ni < n and 0 <= nj < n):
                    continue  # boundary: no flux
                nb = (l, ni, nj)
                if nb in data and nb not in leaves:
                    # finer neighbor: consume the ledger at update time
                    slots[slot] = None
                    deferred.append((key, slot, (key, (di, dj))))
                    continue
                axis = 0 if di else 1
                if di == 1 or dj == 1:
                    lo = (i, j)
                    sign = 1.0
                else:
                    lo = (ni, nj)
                    sign = -1.0
                F = self._canonical_flux(l, lo[0], lo[1], axis, comp, weights, flux_cache)
                out = F if sign > 0 else -F
                slots[slot] = out
                if nb not in data:
                    # neighbor region is coarser: this is the fine side of an
                    # interface; push the time-weighted flux to the coarse face
                    coarse = self.tree.leaf_covering(l, ni, nj)
                    if coarse is None or l - coarse[0] != 1:
                        raise RuntimeError(f"grading violated at {key} -> {(l, ni, nj)}")
                    fid = (coarse, (-di, -dj))
                    ledger[fid] = ledger.get(fid, 0.0) + dt_l * out
            face_values[key] = slots
        return face_values, deferred

    def _apply_level(self, l: int, dt_l: float, face_values: dict, deferred: list,
                     ledger: dict, state_l, t: float, substeps: int = 1):
        """Complete the level-l window: fill ledgered faces, update v and w.

        With substeps > 1 the membrane kinetics are integrated through that
        many forward-Euler sub-iterations of the local ODE (fluxes stay at
        the window-start values per the level schedule); this keeps coarse
        windows inside the reaction stability limit without touching the
        conservative flux bookkeeping.
        """
        for key, slot, fid in deferred:
            total = ledger.pop(fid, 0.0)
            face_values[key][slot] = -total / dt_l
        keys_l = self.by_level.get(l, [])
        if not keys_l:
            return
        area = 4.0 ** (-l)
        coeff = dt_l / (self.p.beta * self.p.c_m * area)
        v0, w0, i_app = state_l
        div = np.array([(face_values[k][0] + face_values[k][1])
                        + (face_values[k][2] + face_values[k][3]) for k in keys_l])
        if not self.reaction:
            v_new = v0 - coeff * div
            w_new = w0
        elif substeps <= 1:
            v_new = v0 - coeff * div + dt_l * fv.reaction_rate_v(v0, w0, i_app, self.p)
            w_new = w0 + dt_l * md.h_gate(v0, w0, self.p)
        else:
            dt_sub = dt_l / substeps
            v_r, w_r = v0, w0
            for _ in range(substeps):
                dv = fv.reaction_rate_v(v_r, w_r, i_app, self.p)
                dw = md.h_gate(v_r, w_r, self.p)
                v_r = v_r + dt_sub * dv
                w_r = w_r + dt_sub * dw
            v_new = v_r - coeff * div
            w_new = w_r
        bad = ~np.isfinite(v_new) | (np.abs(v_new) > self.blowup_factor * self.p.v_p)
        if np.any(bad):
            k_bad = keys_l[int(np.argmax(bad))]
            raise fv.InstabilityError(
                f"|v| blow-up at level {l} cell {k_bad}, t = {t:.6g}: the level "
                f"time step violates the CFL bound",
                time=t, level=l,
            )
        if len(v_new):
            self.max_abs_v = max(self.max_abs_v, float(np.max(np.abs(v_new))))
        data = self.tree.data
        for r, key in enumerate(keys_l):
            d = data[key]
            d[0] = float(v_new[r])
            d[2] = float(w_new[r])
        self.tree.touch()

    def _level_state(self, l: int, t: float):
        """Window-start (v, w, i_app) arrays for level-l leaves."""
        keys_l = self.by_level.get(l, [])
        if not keys_l:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        data = self.tree.data
        v = np.array([data[k][0] for k in keys_l])
        w = np.array([data[k][2] for k in keys_l])
        if not self.reaction:
            return v, w, np.zeros(len(keys_l))
        i_app = self._leaf_i_app(t)
        rows = np.array([self.index[k] for k in keys_l])
        return v, w, i_app[rows]

    def _leaf_i_app(self, t: float) -> np.ndarray:
        return np.asarray(md.applied_current(t, self.leaf_x, self.leaf_y,
                                             self.proto, weights=self.leaf_area))

    # ------------------------------------------------------------- elliptic

    def _instant_fluxdiv(self, comp: int, weights) -> np.ndarray:
        """Instantaneous leaf-mesh flux divergence of one component.

        Uses the same face machinery as the explicit sweeps (fine-level
        interface fluxes against predicted virtual leaves), so the elliptic
        operator matches the scheme's flux rules exactly.
        """
        ledger: dict = {}
        cache: dict = {}
        stash = {}
        for l in sorted(self.by_level, reverse=True):
            stash[l] = self._stash_level(l, 1.0, comp, weights, ledger, cache)
        div = np.empty(len(self.keys))
        for l, (face_values, deferred) in stash.items():
            for key, slot, fid in deferred:
                face_values[key][slot] = -ledger.pop(fid, 0.0)
            for key in self.by_level[l]:
                s = face_values[key]
                div[self.index[key]] = (s[0] + s[1]) + (s[2] + s[3])
        return div

    def _apply_ue_operator(self, u_vec: np.ndarray) -> np.ndarray:
        """Action of the positive-semidefinite operator -fluxdiv_(i+e) at u_vec."""
        saved = self._gather(1)
        self._scatter(1, u_vec)
        self.tree.project_up()
        div = self._instant_fluxdiv(1, self.weights_ie)
        self._scatter(1, saved)
        self.tree.project_up()
        return -div

    def has_interfaces(self) -> bool:
        return len(self.by_level) > 1

    def solve_elliptic(self, t: float) -> None:
        """Extracellular solve over the leaves.

        On a single-level tree the flux operator coincides with the symmetric
        matrix and one projected-CG solve suffices. With coarse-fine
        interfaces, the consistent operator (virtual-leaf interface fluxes)
        is mildly nonsymmetric; it is solved by defect correction with the
        symmetric matrix as the inner solver.
        """
        i_app = self._leaf_i_app(t) if self.reaction else np.zeros(len(self.keys))
        self.tree.project_up()
        div_i = self._instant_fluxdiv(0, self.weights_i)
        b = div_i - self.leaf_area * i_app
        guess = self._gather(1)
        if not self.has_interfaces():
            sysm = LinearSystem(self.A_ie, b, self.leaf_area, tol=self.solver_tol)
            ue = solve_zero_mean(sysm, guess)
        else:
            ue = self._solve_defect_correction(b, guess)
        self._scatter(1, ue)
        self.compatibility_log.append(float(self.leaf_area @ ue))

    def _solve_defect_correction(self, b: np.ndarray, guess: np.ndarray,
                                 max_outer: int = 80) -> np.ndarray:
        from .elliptic import ConvergenceError, project_zero_mean

        bnorm = float(np.linalg.norm(b))
        target = self.solver_tol * (bnorm if bnorm > 0 else 1.0)
        u = project_zero_mean(np.array(guess, dtype=float), self.leaf_area)
        rnorm = None
        for _ in range(max_outer):
            r = b - self._apply_ue_operator(u)
            r = r - r.sum() / r.size
            rnorm = float(np.linalg.norm(r))
            if rnorm <= target:
                return project_zero_mean(u, self.leaf_area)
            inner = LinearSystem(self.A_ie, r, self.leaf_area,
                                 tol=min(1.0e-3, 0.1 * target / rnorm))
            u = u + solve_zero_mean(inner)
        raise ConvergenceError(max_outer, rnorm if rnorm is not None else float("nan"), target)

    # ------------------------------------------------------------- drivers

    def step_global(self, dt: float) -> None:
        """One global step: every leaf advances by dt (mode `mr`)."""
        self.tree.project_up()
        t = self.fine_steps * dt
        ledger: dict = {}
        flux_cache: dict = {}
        stash = {}
        for l in sorted(self.by_level, reverse=True):
            stash[l] = self._stash_level(l, dt, 1, self.weights_e, ledger, flux_cache)
        states = {l: self._level_state(l, t) for l in self.by_level}
        for l in sorted(self.by_level, reverse=True):
            face_values, deferred = stash[l]
            self._apply_level(l, dt, face_values, deferred, ledger, states[l], t)
        if ledger:
            raise RuntimeError(f"unconsumed interface ledger entries: {list(ledger)[:3]}")
        self.solve_elliptic(t + dt)
        self.fine_steps += 1
        self.steps_since_remesh += 1

    def advance_sync_cycle(self, dt_finest: float) -> int:
        """One synchronization cycle of the recursive LTS scheme.

        Advances every leaf to the same time stamp: one step of the coarsest
        active level, 2^(lmax-l0) steps of the finest active level. Returns
        the number of finest-level (config L) units elapsed.
        """
        L = self.cfg.finest_level
        lmax = self.tree.max_leaf_level()
        l0 = self.tree.min_leaf_level()
        n_iter = 1 << (lmax - l0)
        iter_units = 1 << (L - lmax)      # dt_finest units per iteration
        schedule = LtsSchedule(dt_finest, L)
        ledger: dict = {}
        pending: dict = {}
        for k in range(1, n_iter + 1):
            self.tree.project_up()
            flux_cache: dict = {}
            for l in sorted(self.by_level, reverse=True):
                if (k - 1) % (1 << (lmax - l)) == 0:
                    t_l = (self.fine_steps + (k - 1) * iter_units) * dt_finest
                    dt_l = schedule.dt_for_level(l)
                    fw, dfr = self._stash_level(l, dt_l, 1, self.weights_e,
                                                ledger, flux_cache)
                    pending[l] = (fw, dfr, self._level_state(l, t_l), t_l, dt_l)
            for l in sorted(self.by_level, reverse=True):
                if k % (1 << (lmax - l)) == 0:
                    fw, dfr, state_l, t_l, dt_l = pending.pop(l)
                    substeps = (1 << (L - l)) if self.reaction_substeps else 1
                    self._apply_level(l, dt_l, fw, dfr, ledger, state_l, t_l,
                                      substeps=substeps)
            t_now = (self.fine_steps + k * iter_units) * dt_finest
            if self.elliptic_cadence == "every_fine_step" or k == n_iter:
                self.solve_elliptic(t_now)
        if ledger or pending:
            raise RuntimeError("local-time-stepping bookkeeping left unconsumed entries")
        self.fine_steps += n_iter * iter_units
        self.steps_since_remesh += n_iter * iter_units
        return n_iter * iter_units

    def maybe_remesh(self) -> bool:
        if self.force_full_tree:
            return False
        if self.steps_since_remesh < self.cfg.remesh_interval:
            return False
        self.tree.remesh()
        self.steps_since_remesh = 0
        self._rebuild_plan()
        return True

    def interface_flux(self, coarse_key, direction, comp: int = 1, medium: str = md.EXTRA):
        """Conservative flux across a coarse-fine interface.

        The fine sub-fluxes are computed at the finer level against virtual
        leaf values; returns (sum of fine outward fluxes, coarse-side flux),
        the latter being minus the former.
        """
        weights = self.weights_e if medium == md.EXTRA else self.weights_i
        self.tree.project_up()
        l, i, j = coarse_key
        di, dj = direction
        fine_level = l + 1
        cache: dict = {}
        fine_total = 0.0
        for ck in _edge_children((l, i + di, j + dj), (-di, -dj)):
            fi, fj = ck[1], ck[2]
            ni, nj = fi - di, fj - dj  # virtual cell inside the coarse leaf
            axis = 0 if di else 1
            if di == 1 or dj == 1:
                lo = (ni, nj)
                outward_sign = -1.0  # canonical +axis flux points into the fine leaf
            else:
                lo = (fi, fj)
                outward_sign = 1.0
            F = self._canonical_flux(fine_level, lo[0], lo[1], axis, comp, weights, cache)
            fine_total += outward_sign * F
        return fine_total, -fine_total


def _edge_children(parent_key, toward):
    """The two children of parent_key adjacent to its edge facing `toward`."""
    l, i, j = parent_key
    di, dj = toward
    out = []
    for e1, e2 in ((0, 0), (1, 0), (0, 1), (1, 1)):
        if (di == 1 and e1 == 1) or (di == -1 and e1 == 0) \
                or (dj == 1 and e2 == 1) or (dj == -1 and e2 == 0):
            out.append((l + 1, 2 * i + e1, 2 * j + e2))
    return out
