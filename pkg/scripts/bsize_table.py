"""Per-prior batch sizes for the reference conv shapes, checked against the stored values."""
import argparse
import sys

from privqj.netbench.cli import PLAN_COLUMNS, emit, plan_table, reference_table
from privqj.planner import SlotParams, parse_shape


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=8192)
    ap.add_argument("--check-layouts", action="store_true")
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args()
    shapes = [parse_shape(s) for s in reference_table()[0]]
    rows = plan_table(shapes, SlotParams(args.N), args.check_layouts)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    emit(rows, "csv", fh, PLAN_COLUMNS)
    if args.out:
        fh.close()
    return 1 if any(r["status"].startswith("MISMATCH") for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
