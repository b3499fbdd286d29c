"""Run orchestration: drives the engines, emits snapshot and metrics files,
and computes normalized error norms between runs.

Snapshot format, one file per requested time:
    # t=<time> L=<level> mode=<mode>
    l,i,j,x_center,y_center,side,v,u_e,w      (one row per leaf)
Row order is the sorted (l, i, j) traversal, so two runs from the same
configuration produce byte-identical files.

Metrics file: one row per snapshot
    time, leaf_count, eta, err_v_L1, err_v_L2, err_v_Linf,
    err_ue_L1, err_ue_L2, err_ue_Linf
followed by a trailer with the stepping wall-clock and, when a reference
run is available, the speedup nu = wall_ref / wall_run.
"""

from __future__ import annotations

import math
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import fv
from . import model as md
from .config import RunConfig
from .lts import TreeEngine
from .mr import predict_level, project_level

SNAPSHOT_PREFIX = "snapshot_"
METRICS_FILE = "metrics.csv"
CONFIG_ECHO = "config_used.ini"


@dataclass
class RunMetrics:
    mode: str
    level: int
    dt: float
    n_steps: int
    snapshot_rows: list = field(default_factory=list)  # dicts per snapshot
    wall_stepping: float = 0.0
    nu: float | None = None
    compatibility_max: float = 0.0
    max_abs_v: float = 0.0


def _format_row(l, i, j, side, v, ue, w):
    x = (i + 0.5) * side
    y = (j + 0.5) * side
    return f"{l},{i},{j},{x!r},{y!r},{side!r},{v!r},{ue!r},{w!r}"


def write_snapshot(path, t, level, mode, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# t={t!r} L={level} mode={mode}\n")
        for row in rows:
            fh.write(row + "\n")


def uniform_rows(state: fv.UniformState, level: int):
    n = 1 << level
    side = 2.0**-level
    v, ue, w = state.v, state.ue, state.w
    out = []
    for i in range(n):
        for j in range(n):
            out.append(_format_row(level, i, j, side, float(v[i, j]), float(ue[i, j]), float(w[i, j])))
    return out

def tree_rows(engine: TreeEngine):
    data = engine.tree.data
    out = []
    for key in engine.keys:
        l, i, j = key
        side = 2.0**-l
        d = data[key]
        out.append(_format_row(l, i, j, side, d[0], d[1], d[2]))
    return out


def initial_fine_fields(cfg: RunConfig):
    """Fine-grid initial data shared by every mode (defines the common dt)."""
    n = 1 << cfg.finest_level
    h = 1.0 / n
    xs = (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    v0, w0 = md.initial_state(X, Y, cfg.stimulus)
    areas = np.full((n, n), h * h)
    i_app0 = md.applied_current(0.0, X, Y, cfg.stimulus, weights=areas)
    return v0, w0, i_app0, h


def initial_dt(cfg: RunConfig) -> float:
    v0, w0, i_app0, h = initial_fine_fields(cfg)
    if not cfg.reaction:
        i_app0 = np.zeros_like(i_app0)
    bound = fv.cfl_max_dt(v0, w0, i_app0, cfg.params, h, cfg.reaction)
    return float(cfg.cfl_factor * bound)


def _snapshot_steps(cfg: RunConfig, dt: float, n_total: int):
    """Step index per requested snapshot time (nearest completed step)."""
    out = []
    for t in cfg.snapshot_times:
        k = int(round(t / dt))
        out.append(min(max(k, 0), n_total))
    return out


def run(cfg: RunConfig, out_dir: str) -> RunMetrics:
    """Execute the configured simulation and write snapshots plus metrics."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    from .config import dumps_config

    with open(os.path.join(out_dir, CONFIG_ECHO), "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))

    dt = initial_dt(cfg)
    mr_cfg = cfg.mr_config()
    if cfg.use_derived_tolerance:
        from dataclasses import replace as _dc_replace

        from . import model as _md
        from .fv import spectral_norm_2x2
        from .mr import reference_tolerance

        v0, w0, i_app0, h = initial_fine_fields(cfg)
        max_react = float(np.max(np.abs(_md.i_ion(v0, w0, cfg.params))
                                 + 2.0 * np.abs(i_app0)))
        max_tens = spectral_norm_2x2(_md.conductivity_tensor(cfg.params, _md.INTRA)) + \
            spectral_norm_2x2(_md.conductivity_tensor(cfg.params, _md.EXTRA))
        eps = reference_tolerance(cfg.tol_C, cfg.tol_alpha, cfg.tol_D,
                                  cfg.finest_level, max_react, max_tens)
        mr_cfg = _dc_replace(mr_cfg, eps_ref=eps)
    n_total = max(1, math.ceil(cfg.t_final / dt - 1e-12))
    snap_steps = _snapshot_steps(cfg, dt, n_total)
    metrics = RunMetrics(mode=cfg.mode, level=cfg.finest_level, dt=dt, n_steps=n_total)

    emitted: dict[int, int] = {}

    def emit(step_idx, t, level, rows, leaf_count, eta):
        for si, target in enumerate(snap_steps):
            if target == step_idx and si not in emitted:
                path = os.path.join(out_dir, f"{SNAPSHOT_PREFIX}{si:03d}.csv")
                write_snapshot(path, t, level, cfg.mode, rows)
                emitted[si] = step_idx
                metrics.snapshot_rows.append(
                    {"index": si, "time": t, "leaf_count": leaf_count, "eta": eta}
                )

    if cfg.mode == "uniform":
        eng = fv.UniformEngine(cfg.params, cfg.stimulus, cfg.finest_level,
                               full_tensor=cfg.full_tensor_flux, reaction=cfg.reaction,
                               solver_tol=cfg.solver_tol, blowup_factor=cfg.blowup_factor)
        n = 1 << cfg.finest_level
        eta_uniform = (4**cfg.finest_level) / (
            2.0 ** (-(cfg.finest_level + 1)) * 4**cfg.finest_level + n * n
        )
        emit(0, 0.0, cfg.finest_level, uniform_rows(eng.state, cfg.finest_level), n * n, eta_uniform)
        step_dt = dt
        for k in range(1, n_total + 1):
            if cfg.dt_policy == "adaptive":
                step_dt = cfg.cfl_factor * eng.max_dt()
            t0 = _time.perf_counter()
            st = eng.step(step_dt)
            metrics.wall_stepping += _time.perf_counter() - t0
            emit(k, st.t, cfg.finest_level, uniform_rows(st, cfg.finest_level), n * n, eta_uniform)
        metrics.max_abs_v = eng.max_abs_v
    else:
        eng = TreeEngine(cfg.params, cfg.stimulus, mr_cfg,
                         full_tensor=cfg.full_tensor_flux, reaction=cfg.reaction,
                         solver_tol=cfg.solver_tol, blowup_factor=cfg.blowup_factor,
                         force_full_tree=cfg.force_full_tree,
                         elliptic_cadence=cfg.elliptic_cadence,
                         reaction_substeps=cfg.lts_reaction_substeps)

        def tree_emit(step_idx):
            comp = eng.tree.compression()
            for si, target in enumerate(snap_steps):
                if si not in emitted and target <= step_idx:
                    path = os.path.join(out_dir, f"{SNAPSHOT_PREFIX}{si:03d}.csv")
                    write_snapshot(path, step_idx * dt, cfg.finest_level, cfg.mode, tree_rows(eng))
                    emitted[si] = step_idx
                    metrics.snapshot_rows.append(
                        {"index": si, "time": step_idx * dt,
                         "leaf_count": comp.leaf_count, "eta": comp.eta}
                    )

        tree_emit(0)
        while eng.fine_steps < n_total:
            t0 = _time.perf_counter()
            if cfg.mode == "mr":
                eng.step_global(dt)
            else:
                eng.advance_sync_cycle(dt)
            metrics.wall_stepping += _time.perf_counter() - t0
            tree_emit(eng.fine_steps)
            eng.maybe_remesh()
        if eng.compatibility_log:
            metrics.compatibility_max = max(abs(c) for c in eng.compatibility_log)
        metrics.max_abs_v = eng.max_abs_v

    errors = None
    if cfg.reference_run and os.path.isdir(cfg.reference_run):
        results, nu = compare_runs(out_dir, cfg.reference_run)
        metrics.nu = nu
        errors = {}
        for row, res in zip(sorted(metrics.snapshot_rows, key=lambda r: r["index"]), results):
            errors[row["index"]] = tuple(res["v"]) + tuple(res["ue"])
    _write_metrics(os.path.join(out_dir, METRICS_FILE), metrics, errors=errors)
    return metrics


def _write_metrics(path, metrics: RunMetrics, errors=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time,leaf_count,eta,err_v_L1,err_v_L2,err_v_Linf,err_ue_L1,err_ue_L2,err_ue_Linf\n")
        for row in sorted(metrics.snapshot_rows, key=lambda r: r["index"]):
            err = (errors or {}).get(row["index"])
            if err is None:
                etxt = ",nan" * 6
            else:
                etxt = "," + ",".join(repr(e) for e in err)
            fh.write(f"{row['time']!r},{row['leaf_count']},{row['eta']!r}{etxt}\n")
        fh.write(f"# wall_clock_stepping_seconds = {metrics.wall_stepping!r}\n")
        fh.write(f"# dt = {metrics.dt!r}\n")
        fh.write(f"# n_steps = {metrics.n_steps}\n")
        if metrics.nu is not None:
            fh.write(f"# nu = {metrics.nu!r}\n")


# --------------------------------------------------------------- snapshots IO

@dataclass
class Snapshot:
    t: float
    level: int
    mode: str
    rows: np.ndarray  # structured columns: l, i, j, v, ue, w


def load_snapshot(path) -> Snapshot:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# t="):
            raise ValueError(f"{path}: missing snapshot header")
        parts = dict(kv.split("=") for kv in header[2:].split())
        t = float(parts["t"])
        level = int(parts["L"])
        mode = parts.get("mode", "?")
        l_, i_, j_, v_, u_, w_ = [], [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cols = line.split(",")
            if len(cols) != 9:
                raise ValueError(f"{path}:{lineno}: expected 9 columns, got {len(cols)}")
            l_.append(int(cols[0])); i_.append(int(cols[1])); j_.append(int(cols[2]))
            v_.append(float(cols[6])); u_.append(float(cols[7])); w_.append(float(cols[8]))
    rows = np.rec.fromarrays(
        [np.array(l_), np.array(i_), np.array(j_),
         np.array(v_), np.array(u_), np.array(w_)],
        names=["l", "i", "j", "v", "ue", "w"],
    )
    return Snapshot(t=t, level=level, mode=mode, rows=rows)


def snapshot_area_sum(snap: Snapshot) -> float:
    return float(math.fsum(4.0 ** (-float(l)) for l in snap.rows.l))


def snapshot_to_uniform(snap: Snapshot, target_level: int | None = None) -> np.ndarray:
    """Reconstruct (3, n, n) fields at the target level from leaf rows.

    Ancestor averages are rebuilt by area-weighted accumulation and the gaps
    below coarse leaves are filled by the prediction operator (zero details),
    matching the in-memory tree decoding.
    """
    L = snap.level if target_level is None else target_level
    rows = snap.rows
    min_l = int(rows.l.min())
    if int(rows.l.max()) > L:
        raise ValueError("snapshot holds leaves finer than the target level")
    levels: dict[int, dict] = {}
    for k in range(len(rows)):
        levels.setdefault(int(rows.l[k]), {})[(int(rows.i[k]), int(rows.j[k]))] = np.array(
            [float(rows.v[k]), float(rows.ue[k]), float(rows.w[k])])
    max_l = int(rows.l.max())
    for l in range(max_l, min_l, -1):
        for (i, j), val in levels.get(l, {}).items():
            parent = levels.setdefault(l - 1, {})
            pk = (i // 2, j // 2)
            if pk not in parent:
                parent[pk] = np.zeros(3)
            parent[pk] = parent[pk] + 0.25 * val
    n0 = 1 << min_l
    arr = np.empty((3, n0, n0))
    level_map = levels.get(min_l, {})
    if len(level_map) != n0 * n0:
        raise ValueError("snapshot leaves do not tile the domain at the coarsest level")
    for (i, j), val in level_map.items():
        arr[:, i, j] = val
    for l in range(min_l, L):
        m = arr.shape[1]
        nxt = np.empty((3, 2 * m, 2 * m))
        for c in range(3):
            nxt[c] = predict_level(arr[c])
        for (i, j), val in levels.get(l + 1, {}).items():
            nxt[:, i, j] = val
        arr = nxt
    return arr


def restrict_to_level(fields: np.ndarray, target_level: int) -> np.ndarray:
    """Project (3, n, n) fields down to the target level by averaging."""
    out = fields
    while out.shape[1] > (1 << target_level):
        out = np.stack([project_level(out[c]) for c in range(out.shape[0])])
    return out


def error_norms(a: np.ndarray, b: np.ndarray):
    """Normalized (L1, L2, Linf) of a - b, normalized by the norms of b."""
    if a.shape != b.shape:
        raise ValueError(f"field shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    l1 = float(np.sum(np.abs(diff)) / max(np.sum(np.abs(b)), 1e-300))
    l2 = float(np.sqrt(np.sum(diff * diff)) / max(np.sqrt(np.sum(b * b)), 1e-300))
    linf = float(np.max(np.abs(diff)) / max(np.max(np.abs(b)), 1e-300))
    return l1, l2, linf


def list_snapshots(run_dir):
    names = sorted(n for n in os.listdir(run_dir)
                   if n.startswith(SNAPSHOT_PREFIX) and n.endswith(".csv"))
    return [os.path.join(run_dir, n) for n in names]


def read_metrics_trailer(run_dir):
    out = {}
    path = os.path.join(run_dir, METRICS_FILE)
    if not os.path.exists(path):
        return out
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") and "=" in line:
                key, val = line[1:].split("=", 1)
                out[key.strip()] = val.strip()
    return out


def compare_runs(run_dir: str, ref_dir: str):
    """Per-snapshot normalized errors of a run against a reference run.

    The run fields are decoded by prediction to the run's level; the
    reference is projected down to that level by averaging. Returns a list
    of dicts and the speedup nu when both trailers carry wall clocks.
    """
    run_snaps = list_snapshots(run_dir)
    ref_snaps = list_snapshots(ref_dir)
    results = []
    for rp, fp in zip(run_snaps, ref_snaps):
        snap = load_snapshot(rp)
        ref = load_snapshot(fp)
        level = min(snap.level, ref.level)
        a = restrict_to_level(snapshot_to_uniform(snap), level)
        b = restrict_to_level(snapshot_to_uniform(ref), level)
        entry = {"time": snap.t, "ref_time": ref.t, "level": level}
        entry["v"] = error_norms(a[0], b[0])
        entry["ue"] = error_norms(a[1], b[1])
        entry["w"] = error_norms(a[2], b[2])
        results.append(entry)
    nu = None
    tr_run = read_metrics_trailer(run_dir)
    tr_ref = read_metrics_trailer(ref_dir)
    try:
        wall_run = float(tr_run["wall_clock_stepping_seconds"])
        wall_ref = float(tr_ref["wall_clock_stepping_seconds"])
        if wall_run > 0:
            nu = wall_ref / wall_run
    except (KeyError, ValueError):
        nu = None
    return results, nu
