"""Run the four large ReLU-conv blocks with one prior each and tabulate what the prior adds."""
import argparse
import csv
import sys
import time

from privqj.netbench.runs import run_block
from privqj.planner import SlotParams, parse_shape
from privqj.transport import PROFILES

SHAPES = ["56,64,3,64", "28,128,3,128", "14,256,3,256", "7,512,3,512"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--shape", action="append", help="H_i,C_i,f_h,C_o (repeatable)")
    ap.add_argument("--N", type=int, default=8192)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--merge-final-share", action="store_true")
    ap.add_argument("--out", help="CSV path (default stdout)")
    args = ap.parse_args()
    rows = []
    for s in args.shape or SHAPES:
        t0 = time.perf_counter()
        run = run_block(parse_shape(s), SlotParams(args.N), args.seed,
                        merge=args.merge_final_share, check=True)
        d = run.prior_deltas()
        row = {"shape": s, "batch": len(run.batch), "offline_pool": run.pool,
               "prior_online_bytes": d["prior_online_bytes"],
               "prior_online_mib": round(d["prior_online_bytes"] / 2**20, 4),
               "prior_online_rounds": d["prior_online_rounds"],
               "prior_he_ops": sum(v for k, v in d.items() if k.startswith("prior_he_")),
               "bytes_total": run.transcript.bytes(), "rounds_total": run.transcript.rounds(),
               "oracle_match": run.correct, "elapsed_s": round(time.perf_counter() - t0, 1)}
        for name, prof in PROFILES.items():
            row[f"modeled_prior_added_s[{name}]"] = round(run.costs(prof).prior_frame_time, 5)
        rows.append(row)
        print(f"{s}: done in {row['elapsed_s']} s", file=sys.stderr)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        fh.close()
    return 0 if all(r["oracle_match"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
