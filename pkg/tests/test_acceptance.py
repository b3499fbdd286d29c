"""Acceptance gate: one test per criterion, each printing a pass/fail line.

The desk-scale runs (level 6, reference tolerance 5e-4, cfl factor 0.5,
horizon 0.5) are produced once per session and shared across criteria.

The compression criterion is implemented faithfully and is expected to fail
at this scale: the safety-zone shells of the adaptation algorithm cost a
fixed number of fine cells per feature that fits into a level-9 budget but
not into a level-6 one; see the analysis in the repository notes. The other
nine criteria pass.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from mrbidomain import fv, harness, mr
from mrbidomain import model as md
from mrbidomain.config import RunConfig
from mrbidomain.lts import TreeEngine
from mrbidomain.mr import MRConfig
from conftest import monomial_cell_averages, principal_axis_angle

V_HALF = 50.0  # v_p / 2 with the published v_p = 100


def report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Uniform and adaptive desk runs shared by the quantitative criteria."""
    root = tmp_path_factory.mktemp("desk")
    cfg = RunConfig().validate()
    t0 = time.perf_counter()
    uniform = harness.run(replace(cfg, mode="uniform"), str(root / "uniform"))
    mr_full = harness.run(cfg, str(root / "mr"))
    mr_half = harness.run(replace(cfg, eps_ref=2.5e-4), str(root / "mr_half"))
    wall = time.perf_counter() - t0
    return {
        "root": root,
        "cfg": cfg,
        "uniform": uniform,
        "mr_full": mr_full,
        "mr_half": mr_half,
        "wall": wall,
    }


def test_a01_mr_losslessness():
    rng = np.random.default_rng(2024)
    x = rng.standard_normal((256, 256))
    t0 = time.perf_counter()
    err = float(np.max(np.abs(mr.decode(mr.encode(x, min_level=2)) - x)))
    wall = time.perf_counter() - t0
    ok = err <= 1e-12 and wall < 5.0
    assert report("MR transform losslessness",
                  ok, f"round-trip max error {err:.2e} (<=1e-12) in {wall:.2f}s (<5s)")


def test_a02_prediction_consistency():
    rng = np.random.default_rng(7)
    st = rng.standard_normal((100000, 5, 5))
    mean4 = 0.25 * ((mr.predict_child(st, 0, 0) + mr.predict_child(st, 1, 0))
                    + (mr.predict_child(st, 0, 1) + mr.predict_child(st, 1, 1)))
    worst = float(np.max(np.abs(mean4 - st[:, 2, 2])))
    ok = worst <= 1e-14
    assert report("Prediction consistency",
                  ok, f"worst |mean of 4 - parent| {worst:.2e} on 1e5 stencils (<=1e-14)")


def test_a03_polynomial_cancellation():
    # oracle: closed-form monomial integrals over dyadic cells; the prediction
    # must reproduce every monomial up to the established total degree 4
    L = 5
    worst = 0.0
    for deg in range(5):
        for a in range(deg + 1):
            b = deg - a
            pred = mr.predict_level(monomial_cell_averages(L, a, b))
            exact = monomial_cell_averages(L + 1, a, b)
            scale = max(float(np.max(np.abs(exact))), 1e-300)
            worst = max(worst, float(np.max(np.abs(pred - exact)[4:-4, 4:-4]) / scale))
    ok = worst <= 1e-12
    assert report("Polynomial cancellation",
                  ok, f"max relative detail {worst:.2e} over all monomials of degree <= 4")


def _tree_mass(eng):
    return math.fsum(4.0 ** (-k[0]) * eng.tree.data[k][0] for k in eng.tree.leaves)


def test_a04_conservation(desk_params, desk_proto):
    drifts = {}
    eng_u = fv.UniformEngine(desk_params, desk_proto, 6, reaction=False)
    dt = 0.5 * eng_u.max_dt()
    m0 = float(np.sum(eng_u.state.v)) * eng_u.h**2
    for _ in range(200):
        eng_u.step(dt)
    drifts["uniform"] = abs(float(np.sum(eng_u.state.v)) * eng_u.h**2 - m0)

    cfg = MRConfig(finest_level=5, min_level=2)
    eng_m = TreeEngine(desk_params, desk_proto, cfg, reaction=False)
    dtm = 0.5 * eng_m.initial_max_dt
    m0 = _tree_mass(eng_m)
    for _ in range(200):
        eng_m.step_global(dtm)
        eng_m.maybe_remesh()
    drifts["mr"] = abs(_tree_mass(eng_m) - m0)

    eng_l = TreeEngine(desk_params, desk_proto, cfg, reaction=False)
    m0 = _tree_mass(eng_l)
    while eng_l.fine_steps < 200:
        eng_l.advance_sync_cycle(dtm)
        eng_l.maybe_remesh()
    drifts["mr-lts"] = abs(_tree_mass(eng_l) - m0)

    ok = all(d <= 1e-12 for d in drifts.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in drifts.items())
    assert report("Conservation (200 reaction-free steps)", ok, detail + " (<=1e-12)")


def test_a05_compatibility(desk_params, desk_proto):
    cfg = MRConfig(finest_level=5, min_level=2)
    eng = TreeEngine(desk_params, desk_proto, cfg)
    dt = 0.5 * eng.initial_max_dt
    for _ in range(100):
        eng.step_global(dt)
        eng.maybe_remesh()
    worst = max(abs(c) for c in eng.compatibility_log)
    ok = worst <= 1e-10  # weights sum to the unit domain area
    assert report("Compatibility (zero weighted mean of u_e)",
                  ok, f"max |sum(|K| u_e)| {worst:.2e} over {len(eng.compatibility_log)} solves (<=1e-10)")


def test_a06_degenerate_equivalence(desk_params, desk_proto):
    cfg = MRConfig(finest_level=5, min_level=2)
    tree_eng = TreeEngine(desk_params, desk_proto, cfg, force_full_tree=True,
                          solver_tol=1e-12)
    dense_eng = fv.UniformEngine(desk_params, desk_proto, 5, solver_tol=1e-12)
    dt = 0.5 * dense_eng.max_dt()
    for _ in range(50):
        dense_eng.step(dt)
        tree_eng.advance_sync_cycle(dt)
    n = 1 << 5
    worst = 0.0
    for comp, ref in ((0, dense_eng.state.v), (1, dense_eng.state.ue), (2, dense_eng.state.w)):
        got = tree_eng._gather(comp).reshape(n, n)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    ok = worst <= 1e-10
    assert report("Degenerate equivalence (MR+LTS full tree vs uniform FV)",
                  ok, f"max field difference {worst:.2e} over 50 steps at level 5 (<=1e-10)")


def test_a07_threshold_error_control(desk_runs):
    root = desk_runs["root"]
    res_full, _ = harness.compare_runs(str(root / "mr"), str(root / "uniform"))
    res_half, _ = harness.compare_runs(str(root / "mr_half"), str(root / "uniform"))
    d_full = res_full[-1]["v"][0]
    d_half = res_half[-1]["v"][0]
    wall = desk_runs["wall"]
    ok = d_full <= 5e-3 and d_half <= 2.0 * d_full and wall < 120.0
    assert report(
        "Threshold error control",
        ok,
        f"L1(v) vs uniform at t=0.5: {d_full:.2e} (<=5e-3); "
        f"eps/2 gives {d_half:.2e} (within the factor-2 band); runs took {wall:.0f}s (<120s)",
    )


def test_a08_compression(desk_runs):
    """Faithful implementation of the compression criterion.

    This criterion is not attainable at the desk scale: the safety-zone
    shells around any stimulated feature cost ~1000 leaves regardless of the
    front size, while eta >= 5 at level 6 allows at most ~790. The measured
    values are reported and the criterion is left honestly red; the analysis
    lives in the repository notes.
    """
    rows = sorted(desk_runs["mr_full"].snapshot_rows, key=lambda r: r["index"])
    formed = [r for r in rows if r["time"] >= 0.1]
    etas = [r["eta"] for r in formed]
    ok = bool(etas) and all(e >= 5.0 for e in etas)
    report("Compression (eta >= 5 after front forms)", ok,
           "eta at snapshots: " + ", ".join(f"t={r['time']:.3g}: {r['eta']:.2f}" for r in formed))
    assert ok, (
        "eta >= 5 is structurally out of reach at level 6 with eps_ref = 5e-4: "
        "the adaptation algorithm's safety shells around any feature cost about "
        "1000 leaves, capping eta near 4. See notes/decisions.md."
    )


def test_a09_stability(desk_runs, desk_params, desk_proto):
    cfg = desk_runs["cfg"]
    max_v = max(desk_runs["mr_full"].max_abs_v, desk_runs["uniform"].max_abs_v)
    stable = max_v <= 1.5 * cfg.params.v_p

    eng = fv.UniformEngine(desk_params, desk_proto, 6)
    dt4 = 4.0 * eng.max_dt()
    detected = False
    finite = True
    try:
        for _ in range(desk_runs["uniform"].n_steps):
            eng.step(dt4)
    except fv.InstabilityError:
        detected = True
        finite = bool(np.all(np.isfinite(eng.state.v)))
    ok = stable and detected and finite
    assert report(
        "Stability",
        ok,
        f"cfl 0.5 run max|v| {max_v:.1f} (<= {1.5 * cfg.params.v_p:.0f}); "
        f"cfl 4.0 instability detected={detected} with finite state={finite}",
    )


def test_a10_anisotropy(desk_runs):
    snaps = harness.list_snapshots(str(desk_runs["root"] / "mr"))
    snap = harness.load_snapshot(snaps[1])  # mid-run snapshot
    fields = harness.snapshot_to_uniform(snap)
    v = fields[0]
    n = v.shape[0]
    xs = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    mask = v > V_HALF
    angle = principal_axis_angle(mask, X, Y)
    dev = min(abs(angle + 45.0), abs(angle + 45.0 - 180.0), abs(angle + 45.0 + 180.0))
    ok = mask.sum() > 10 and dev <= 5.0
    assert report("Anisotropy",
                  ok, f"principal axis {angle:.2f} deg vs fiber -45 deg "
                      f"(|dev| {dev:.2f} <= 5) on {int(mask.sum())} excited cells at t={snap.t:.3g}")
