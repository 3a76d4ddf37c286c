"""Command-line entry point: ``privqj {plan,block,baseline,model,queue-sim,verify}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..planner import (PlanError, SlotParams, build_chain_layout, check_layout, parse_shape,
                       plan_offline, plan_online, plan_rows)
from ..protocol import SessionConfig
from ..protocol.model import (ModelConfig, build_model, builtin_config, load_queue,
                              model_summary, random_queue, run_model)
from ..ring import DEFAULT_N, DEFAULT_P
from ..transport import PROFILES, get_profile, transfer_time
from . import baselines
from .queue_sim import POLICIES, BlockCosts, QueuePolicy, parse_arrivals, simulate, summary
from .runs import OpCosts, record_block, replay_block, run_block
from .verify import SUITES, Sizes, run_all

DATA = Path(__file__).resolve().parent.parent / "data"

PLAN_COLUMNS = ["shape", "s_hat", "online_bsize", "rows_per_ct", "n", "s_tilde", "offline_bsize",
                "ref_online", "ref_offline", "status"]


# -- output ---------------------------------------------------------------------

def emit(rows: list[dict], fmt: str, out=None, columns=None) -> None:
    out = out or sys.stdout
    if fmt == "json":
        json.dump(rows, out, indent=2, default=str)
        out.write("\n")
        return
    cols = columns or (list(rows[0]) if rows else [])
    w = csv.DictWriter(out, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def _profiles(args) -> list:
    if args.net == "all":
        return list(PROFILES.values())
    return [get_profile(args.net, args.bandwidth, args.rtt)]


def _params(args) -> SlotParams:
    return SlotParams(args.N, args.p)


# -- plan -------------------------------------------------------------------------

def reference_table() -> dict:
    ref = json.loads((DATA / "bsize_reference.json").read_text())
    return {r["shape"]: r for r in ref["rows"]}, ref["N"]


def _layouts_ok(shape, params) -> str:
    """Re-check the slot-conservation invariant on the plans' one-prior layouts."""
    try:
        for plan in (plan_online(shape, params), plan_offline(shape, params)):
            if plan.recycles:
                check_layout(build_chain_layout(plan, list(range(plan.per_prior_batch)), ["P"]))
    except Exception as exc:      # noqa: BLE001 - reported in the table
        return f"layout-error: {exc}"
    return "layout-ok"


def plan_table(shapes, params: SlotParams, check_layouts: bool = False) -> list[dict]:
    ref, ref_n = reference_table()
    rows = plan_rows(shapes, params)
    for sh, row in zip(shapes, rows):
        r = ref.get(row["shape"]) if params.N == ref_n and sh.stride == 1 else None
        if r is None:
            row.update(ref_online="", ref_offline="",
                       status=_layouts_ok(sh, params) if check_layouts else "")
            continue
        row.update(ref_online=r["online"], ref_offline=r["offline"])
        bad = [k for k, col in (("online", "online_bsize"), ("offline", "offline_bsize"))
               if row[col] != r[k]]
        if not bad:
            row["status"] = "match"
        elif bad == [r.get("known_mismatch")]:
            row["status"] = f"documented mismatch ({bad[0]})"
        else:
            row["status"] = "MISMATCH (" + ",".join(bad) + ")"
    return rows


def cmd_plan(args) -> int:
    if args.shape:
        shapes = [parse_shape(s, args.stride, args.padding) for s in args.shape]
    else:
        shapes = [parse_shape(s) for s in reference_table()[0]]
    rows = plan_table(shapes, _params(args), check_layouts=args.check_layouts)
    emit(rows, args.out, columns=PLAN_COLUMNS)
    return 1 if any(r["status"].startswith(("MISMATCH", "layout-error")) for r in rows) else 0


# -- block ------------------------------------------------------------------------

def cmd_block(args) -> int:
    if args.replay:
        same, run = replay_block(args.replay)
        rows = [{"metric": "replay_identical", "value": same}]
    else:
        shape = parse_shape(args.shape, args.stride, args.padding)
        run = run_block(shape, _params(args), args.seed, args.batch, args.priors,
                        relu=not args.no_relu, merge=args.merge_final_share,
                        drelu_mode=args.drelu, record=bool(args.record), check=args.check)
        rows = []
        if args.record:
            record_block(run, args.record)
    rows += [{"metric": k, "value": v} for k, v in run.metrics(_profiles(args))]
    emit(rows, args.out, columns=["metric", "value"])
    ok = all(r["value"] is not False for r in rows if r["metric"] in ("replay_identical",
                                                                       "oracle_match"))
    return 0 if ok else 1


# -- baseline ---------------------------------------------------------------------

def cmd_baseline(args) -> int:
    shape = parse_shape(args.shape, args.stride, args.padding)
    table = baselines.TABLE2_SCHEMES if args.table == "added" else baselines.TABLE1_SCHEMES
    schemes = args.scheme or table
    rows = baselines.baseline_rows(schemes, shape, args.N, args.table)
    if not rows:
        raise SystemExit(f"no {args.table} model for {', '.join(schemes)}")
    emit(rows, args.out)
    return 0


# -- model ------------------------------------------------------------------------

def _load_config(name: str) -> ModelConfig:
    path = Path(name)
    return ModelConfig.load(path if path.exists() else builtin_config(name))


def cmd_model(args) -> int:
    cfg = _load_config(args.config)
    params = _params(args)
    profs = _profiles(args)
    if not cfg.chained:
        rows = model_summary(cfg, params)
        total = {"layer": "TOTAL", "type": "",
                 "prior_online_bytes": sum(r["prior_online_bytes"] for r in rows
                                           if not r["fallback_online"]),
                 "fallback_online": sum(r["fallback_online"] for r in rows),
                 "fallback_offline": sum(r["fallback_offline"] for r in rows)}
        for prof in profs:
            for r in rows + [total]:
                if "prior_online_bytes" in r:
                    r[f"modeled_prior_s[{prof.name}]"] = transfer_time(
                        r["prior_online_bytes"], 0.5 * (not r.get("fallback_online")), prof)
        emit(rows + [total], args.out)
        return 0
    model = build_model(cfg, params.p)
    if args.queue:
        queue = load_queue(args.queue, tuple(cfg.input), params.p, args.seed)
    else:
        queue = random_queue(args.inqueue, args.priors, tuple(cfg.input), params.p, args.seed)
    res = run_model(model, queue, SessionConfig(params, seed=args.seed,
                                                 merge_final_share=args.merge_final_share,
                                                 drelu_mode=args.drelu))
    rows = []
    for rep in res.layers:
        r = {"layer": rep.name, "type": rep.type,
             "fallback_online": rep.fallback_online, "fallback_offline": rep.fallback_offline,
             "bytes_total": sum(rep.bytes.values()),
             "prior_online_bytes": rep.bytes.get("online/prior", 0),
             "prior_rounds": rep.rounds.get("online/prior", 0.0),
             "he_total": sum(rep.he.values()), "prior_he": rep.prior_he_total()}
        for prof in profs:
            r[f"modeled_prior_s[{prof.name}]"] = transfer_time(r["prior_online_bytes"],
                                                               r["prior_rounds"], prof)
        rows.append(r)
    total = {"layer": "TOTAL", "type": ""}
    for k in rows[0]:
        if k not in ("layer", "type"):
            total[k] = sum(r[k] for r in rows)
    ok = all((res.outputs[it.id] == model.oracle(it.x)).all() for it in queue)
    total["oracle_match"] = ok
    emit(rows + [total], args.out, columns=list(rows[0]) + ["oracle_match"])
    return 0 if ok else 1


# -- queue-sim ----------------------------------------------------------------------

def queue_costs(args):
    """Per-profile batch costs from one engine block run (or manual overrides)."""
    if args.costs:
        b, batch_t, frame_t = (float(v) for v in args.costs.split(","))
        c = BlockCosts.proportional(int(b), batch_t, frame_t)
        return {prof.name: c for prof in _profiles(args)}
    shape = parse_shape(args.shape, args.stride, args.padding)
    run = run_block(shape, _params(args), args.seed, args.batch, 1)
    return {prof.name: run.costs(prof, OpCosts()) for prof in _profiles(args)}


def cmd_queue_sim(args) -> int:
    arrivals = parse_arrivals(args.arrivals)
    costs = queue_costs(args)
    policies = [args.policy] if args.policy != "all" else list(POLICIES)
    rows = []
    for name, c in costs.items():
        for pol in policies:
            res = simulate(arrivals, QueuePolicy(pol, c))
            if args.per_input:
                rows += [{"profile": name, "policy": pol, "id": r.id, "prior": r.prior,
                          "arrival": r.arrival, "done": r.done, "wait": r.wait,
                          "added_wait": r.added_wait, "batch": r.batch} for r in res]
            else:
                rows.append({"profile": name, "policy": pol, "batch_size": c.batch_size,
                             "batch_s": c.batch_time, **summary(res)})
    emit(rows, args.out)
    return 0


# -- verify -------------------------------------------------------------------------

def cmd_verify(args) -> int:
    sizes = Sizes.quick() if args.sizes == "quick" else Sizes()
    res = run_all(args.seed, sizes, args.fault, args.only)
    rows = [{"suite": r.name, "result": "PASS" if r.ok else "FAIL", "checked": r.checked,
             "failures": r.failures, "seconds": r.seconds, "detail": r.detail} for r in res]
    emit(rows, args.out)
    return 0 if all(r.ok for r in res) else 1


# -- parser -------------------------------------------------------------------------

def _common(sp, shape_default=None, net_default="all") -> None:
    sp.add_argument("--N", type=int, default=DEFAULT_N, help="slots per ciphertext")
    sp.add_argument("--p", type=int, default=DEFAULT_P, help="plaintext modulus")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", choices=("csv", "json"), default="csv")
    sp.add_argument("--net", default=net_default,
                    choices=("all", "custom", *PROFILES), help="network profile for modeled latency")
    sp.add_argument("--bandwidth", type=float, help="custom profile bandwidth, bits/s")
    sp.add_argument("--rtt", type=float, help="custom profile round-trip time, ms")
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--padding", choices=("same", "valid"), default="same")
    if shape_default is not False:
        sp.add_argument("--shape", default=shape_default, help="H_i,C_i,f_h,C_o")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privqj", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("plan", help="per-prior batch sizes for conv shapes")
    _common(sp, shape_default=False)
    sp.add_argument("--shape", action="append", help="H_i,C_i,f_h,C_o (repeatable); "
                    "default: the built-in reference shapes")
    sp.add_argument("--check-layouts", action="store_true",
                    help="build and check one-prior layouts for shapes without reference values")
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("block", help="run one ReLU-conv block with priors and report costs")
    _common(sp, shape_default="56,64,3,64")
    sp.add_argument("--batch", type=int, help="in-queue inputs (default: online per-prior batch)")
    sp.add_argument("--priors", type=int, default=1)
    sp.add_argument("--no-relu", action="store_true")
    sp.add_argument("--merge-final-share", action="store_true")
    sp.add_argument("--drelu", choices=("dealer", "ot"), default="dealer")
    sp.add_argument("--check", action="store_true", help="compare outputs with the plain oracle")
    sp.add_argument("--record", metavar="PATH", help="write the frame stream to PATH")
    sp.add_argument("--replay", metavar="PATH", help="re-execute a recording and compare")
    sp.set_defaults(fn=cmd_block)

    sp = sub.add_parser("baseline", help="analytic per-prior op counts of other schemes")
    _common(sp, shape_default="56,64,3,64")
    sp.add_argument("--scheme", action="append", help="scheme name (repeatable; default all)")
    sp.add_argument("--table", choices=("added", "asymptotic"), default="added")
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("model", help="run a chained model config (or summarize a block list)")
    _common(sp, shape_default=False)
    sp.add_argument("--config", default="toy", help="built-in name or JSON path")
    sp.add_argument("--queue", help="queue JSON file")
    sp.add_argument("--inqueue", type=int, default=8)
    sp.add_argument("--priors", type=int, default=1)
    sp.add_argument("--merge-final-share", action="store_true")
    sp.add_argument("--drelu", choices=("dealer", "ot"), default="dealer")
    sp.set_defaults(fn=cmd_model)

    sp = sub.add_parser("queue-sim", help="waiting times under the three prior policies")
    _common(sp, shape_default="14,64,3,64")
    sp.add_argument("--arrivals", default="P@0, 16xQ@0",
                    help="e.g. '16xQ@0, P@0.5, 8xQ@1+0.1'")
    sp.add_argument("--policy", choices=("all", *POLICIES), default="all")
    sp.add_argument("--batch", type=int, help="batch size (default: online per-prior batch)")
    sp.add_argument("--costs", help="manual 'batch_size,batch_seconds,prior_frame_seconds'")
    sp.add_argument("--per-input", action="store_true")
    sp.set_defaults(fn=cmd_queue_sim)

    sp = sub.add_parser("verify", help="oracle and property suites")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sizes", choices=("quick", "full"), default="full")
    sp.add_argument("--fault", choices=("overlap", "drop", "shift"),
                    help="also run the layout checker on deliberately damaged layouts")
    sp.add_argument("--only", action="append", choices=SUITES)
    sp.add_argument("--out", choices=("csv", "json"), default="csv")
    sp.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "net", None) == "custom" and (args.bandwidth is None or args.rtt is None):
        raise SystemExit("--net custom needs --bandwidth and --rtt")
    try:
        return args.fn(args)
    except (PlanError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
