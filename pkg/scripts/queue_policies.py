"""Compare the three prior-input policies on one engine-costed block under every network profile."""
import argparse
import csv
import sys

from privqj.netbench.queue_sim import POLICIES, QueuePolicy, parse_arrivals, simulate, summary
from privqj.netbench.runs import run_block
from privqj.planner import SlotParams, parse_shape
from privqj.transport import PROFILES


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shape", default="14,64,3,64")
    ap.add_argument("--N", type=int, default=8192)
    ap.add_argument("--batches", type=int, default=3, help="in-queue batches queued at t=0")
    ap.add_argument("--priors", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args()
    run = run_block(parse_shape(args.shape), SlotParams(args.N), args.seed)
    b = len(run.batch)
    arrivals = parse_arrivals(f"{args.priors}xP@0, {args.batches * b}xQ@0")
    rows = []
    for name, prof in PROFILES.items():
        costs = run.costs(prof)
        for pol in POLICIES:
            s = summary(simulate(arrivals, QueuePolicy(pol, costs)))
            rows.append({"profile": name, "policy": pol, "batch_size": b,
                         "batch_s": round(costs.batch_time, 4), **s})
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
