import os
from dataclasses import replace

import numpy as np
import pytest

from mrbidomain import harness
from mrbidomain.config import RunConfig


def test_mr_lts_mode_through_harness(tmp_path):
    cfg = replace(RunConfig(), mode="mr-lts", finest_level=5, min_level=2,
                  t_final=0.3, snapshot_times=(0.0, 0.3)).validate()
    out = str(tmp_path / "lts")
    metrics = harness.run(cfg, out)
    snaps = harness.list_snapshots(out)
    assert len(snaps) == 2
    last = harness.load_snapshot(snaps[-1])
    assert last.t >= 0.3 - metrics.dt  # nearest completed synchronization point
    assert harness.snapshot_area_sum(last) == pytest.approx(1.0, abs=1e-12)
    assert metrics.compatibility_max <= 1e-10
    assert metrics.max_abs_v <= 1.5 * cfg.params.v_p
    fields = harness.snapshot_to_uniform(last)
    assert np.all(np.isfinite(fields))


def test_mr_lts_elliptic_cadence_sync_only(tmp_path):
    cfg = replace(RunConfig(), mode="mr-lts", finest_level=4, min_level=2,
                  t_final=0.2, snapshot_times=(0.2,), reaction=False,
                  elliptic_cadence="sync_only").validate()
    out = str(tmp_path / "lts2")
    metrics = harness.run(cfg, out)
    assert metrics.compatibility_max <= 1e-10


def test_reference_run_fills_metrics_errors(tmp_path):
    base = replace(RunConfig(), mode="uniform", finest_level=4, min_level=2,
                   t_final=0.2, snapshot_times=(0.0, 0.2), reaction=False).validate()
    out_ref = str(tmp_path / "ref")
    harness.run(base, out_ref)
    cfg = replace(base, mode="mr", reference_run=out_ref).validate()
    out = str(tmp_path / "run")
    metrics = harness.run(cfg, out)
    text = open(os.path.join(out, harness.METRICS_FILE)).read()
    body = [l for l in text.splitlines() if l and not l.startswith(("#", "time"))]
    assert body and "nan" not in body[-1]
    assert metrics.nu is None or metrics.nu > 0
