"""render_snapshots <run_dir> [--component v|u_e|w] [--mesh-overlay]"""

from __future__ import annotations

import argparse
import sys

from .render import render_run
from .snapshot import COMPONENTS, SnapshotFormatError


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="render_snapshots",
        description="Render solver snapshot files as heatmap images",
    )
    ap.add_argument("run_dir", help="directory holding snapshot_*.csv files")
    ap.add_argument("--component", choices=COMPONENTS, default="v")
    ap.add_argument("--mesh-overlay", action="store_true",
                    help="draw leaf boundaries on top of the heatmap")
    ap.add_argument("--out", help="output directory (default <run_dir>/render)")
    args = ap.parse_args(argv)
    try:
        written = render_run(args.run_dir, component=args.component,
                             out_dir=args.out, mesh_overlay=args.mesh_overlay)
    except (SnapshotFormatError, FileNotFoundError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
