"""Command line: timing model, relay planning, the relay server, netlab runs and the acceptance suite."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

from .core_model import FeatureSet, TransportParams


def _feature_set(args) -> FeatureSet:
    """A named ladder step, with any individually given flags switched on as well."""
    fs = FeatureSet.from_name(args.features) if args.features else FeatureSet()
    return FeatureSet(fs.early_syn or args.early_syn, fs.thread_pool or args.thread_pool,
                      fs.connection_pool or args.connection_pool, fs.turbo_start or args.turbo_start)


# --- model ----------------------------------------------------------------------------

def cmd_model(args) -> int:
    from .configio import load_scenario
    from .pipe_timing import timing

    s, _seed = load_scenario(args.scenario)
    tb = timing(s)
    print(f"strategy: {s.strategy.value}")
    print(f"features: {s.features.name}")
    print(f"file_size: {s.file_size}")
    print(f"ttfb_ms: {tb.ttfb:.6f}")
    print(f"completion_ms: {tb.completion:.6f}")
    print("terms:")
    for i, (label, d) in enumerate(tb.terms):
        part = "ttfb" if i < len(tb.ttfb_terms) else "tail"
        print(f"  - {label}: {d:.6f}  # {part}")
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a") as fh:
            if new:
                fh.write("scenario,strategy,features,size,ttfb_ms,completion_ms\n")
            fh.write(f"{args.scenario},{s.strategy.value},{s.features.name},{s.file_size},{tb.ttfb!r},{tb.completion!r}\n")
    return 0


# --- plan -----------------------------------------------------------------------------

def cmd_plan(args) -> int:
    from .relay_planner import RttTable, plan_baseline, rank_mid_relays

    table = RttTable.from_csv(Path(args.rtt_csv).read_text())
    relays = args.relays.split(",") if args.relays else sorted(table.hosts() - {args.client, args.server})
    rc, rs = plan_baseline(args.client, args.server, relays, table)
    print(f"rc: {rc}  (rtt {table.get(args.client, rc):g} ms)")
    print(f"rs: {rs}  (rtt {table.get(rs, args.server):g} ms)")
    if rc != rs and (rc, rs) in table:
        mids = [m for m in relays if m not in (rc, rs) and (rc, m) in table and (m, rs) in table]
        print("mid relays (estimated gain):")
        for m, g in rank_mid_relays(rc, rs, mids, table):
            print(f"  {m}: {g:.3f}")
    return 0


# --- relay ----------------------------------------------------------------------------

def build_relay_config(args):
    from .split_relay.config import RelayConfig, Route

    base = TransportParams()
    ext = TransportParams(mss=args.mss, init_cwnd=args.init_cwnd, rwnd=args.rwnd, send_buffer=args.send_buffer,
                          recv_buffer=args.recv_buffer, nagle_enabled=not args.nodelay)
    turbo = TransportParams.turbo(args.turbo_cwnd, args.turbo_window, base)
    return RelayConfig(
        listen_address=args.listen,
        routes=tuple(Route.parse(r) for r in args.route),
        peer_relays=tuple(args.peer),
        pool_port=args.pool_port,
        pool_low_watermark=args.pool_low,
        pool_high_watermark=args.pool_high,
        worker_pool_size=args.workers,
        forward_buffer=args.forward_buffer,
        features=_feature_set(args),
        intra_cloud_params=turbo,
        external_params=ext,
        friendly=not args.unfriendly,
        status_port=args.status_port,
        name=args.name,
    ).validate()


def cmd_relay(args) -> int:
    from .split_relay.relay import Relay
    from .split_relay.sockets import AsyncioNetwork

    try:
        cfg = build_relay_config(args)
    except ValueError as exc:
        print(f"bad relay config: {exc}", file=sys.stderr)
        return 2

    async def main():
        relay = Relay(AsyncioNetwork(cfg.listen_address, bind_outgoing=not args.any_source), cfg)
        await relay.listen()
        await relay.fill_pools()
        logging.info("relay %s up: %s", cfg.name, ", ".join(str(r) for r in cfg.routes))
        try:
            await asyncio.Event().wait()
        finally:
            await relay.close()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return 0


# --- lab ------------------------------------------------------------------------------

def load_matrix(path):
    from .bench import ExperimentMatrix
    from .configio import features_from, params_from_dict, read_yaml, topology_from_dict

    doc = read_yaml(path)
    tops = doc.get("topologies") or [doc.get("topology") or {"preset": "three_leg"}]
    named = {t.get("name", f"t{i}"): topology_from_dict(t) for i, t in enumerate(tops)}
    kw = {}
    if "strategies" in doc:
        kw["strategies"] = tuple(doc["strategies"])
    if "feature_sets" in doc:
        kw["feature_sets"] = tuple(features_from(f) for f in doc["feature_sets"])
    if "sizes" in doc:
        kw["sizes"] = tuple(int(x) for x in doc["sizes"])
    for k in ("repetitions", "mode", "seed", "workers", "fork_jitter_ms"):
        if k in doc:
            kw[k] = doc[k]
    kw["params"] = {leg: params_from_dict(p) for leg, p in (doc.get("params") or {}).items()}
    return ExperimentMatrix(named, **kw)


def _report(records, args) -> None:
    from .bench import IMPROVEMENT_COLUMNS, SUMMARY_COLUMNS, improvement_report, summarize, write_csv

    summary = summarize(records)
    text = write_csv(summary, SUMMARY_COLUMNS)
    strat, _, feats = args.baseline.partition(":")
    ratios = write_csv(improvement_report(summary, strat, feats or "-"), IMPROVEMENT_COLUMNS)
    if args.summary:
        Path(args.summary).write_text(text)
    if args.improvement:
        Path(args.improvement).write_text(ratios)
    sys.stdout.write(text)
    sys.stdout.write("\n" + ratios)


def cmd_lab_run(args) -> int:
    from .bench import RECORD_COLUMNS, run_matrix, write_csv

    m = load_matrix(args.matrix)
    if args.repetitions:
        m.repetitions = args.repetitions
    records = run_matrix(m)
    Path(args.output).write_text(write_csv(records, RECORD_COLUMNS))
    print(f"{len(records)} records -> {args.output}", file=sys.stderr)
    _report(records, args)
    return 0


def cmd_lab_report(args) -> int:
    from .bench import read_csv

    _report(read_csv(Path(args.records).read_text()), args)
    return 0


def cmd_lab_sim(args) -> int:
    from .configio import load_scenario
    from .netlab.scenarios import simulate

    s, seed = load_scenario(args.scenario)
    run = simulate(s, seed=args.seed if args.seed is not None else seed, trace=bool(args.trace))
    r = run.record
    print(json.dumps({"flow": r.flow_id, "ok": r.ok, "bytes": r.bytes_transferred, "ttfb_ms": r.ttfb,
                      "completion_ms": r.completion, "throughput_Bps": r.mean_throughput, "error": r.error}))
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            run.net.trace_csv(fh)
    return 0 if r.ok else 1


def cmd_acceptance(args) -> int:
    from .acceptance import run_all

    results = run_all(args.only or None)
    failed = [r.number for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


# --- parser ---------------------------------------------------------------------------

def _relay_args(p: argparse.ArgumentParser) -> None:
    d = TransportParams()
    p.add_argument("--listen", default="127.0.0.1", help="address to bind (also used as the source address)")
    p.add_argument("--route", action="append", default=[], metavar="PORT=HOST:PORT[@HOST:PORT]",
                   help="listen port, destination and optional next-hop relay; repeatable")
    p.add_argument("--peer", action="append", default=[], metavar="ADDR", help="peer relay address; repeatable")
    p.add_argument("--pool-port", type=int, default=7000)
    p.add_argument("--pool-low", type=int, default=4, help="pool low watermark")
    p.add_argument("--pool-high", type=int, default=8, help="pool high watermark")
    p.add_argument("--workers", type=int, default=8, help="pre-spawned worker contexts")
    p.add_argument("--forward-buffer", type=int, default=16384)
    p.add_argument("--features", help="ladder name, e.g. 'Pied Piper' or '+TP+ES'")
    for flag in ("early-syn", "thread-pool", "connection-pool", "turbo-start"):
        p.add_argument(f"--{flag}", action="store_true")
    p.add_argument("--mss", type=int, default=d.mss)
    p.add_argument("--init-cwnd", type=int, default=d.init_cwnd)
    p.add_argument("--rwnd", type=int, default=d.rwnd)
    p.add_argument("--send-buffer", type=int, default=d.send_buffer)
    p.add_argument("--recv-buffer", type=int, default=d.recv_buffer)
    p.add_argument("--nodelay", action="store_true", help="disable Nagle on external legs")
    p.add_argument("--turbo-cwnd", type=int, default=10_000)
    p.add_argument("--turbo-window", type=int, default=64 << 20)
    p.add_argument("--unfriendly", action="store_true", help="allow non-default external congestion knobs")
    p.add_argument("--status-port", type=int)
    p.add_argument("--any-source", action="store_true", help="let the kernel pick source addresses")
    p.add_argument("--name", default="relay")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cloudsplit", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("model", help="analytical timing for a scenario file")
    p.add_argument("scenario")
    p.add_argument("--csv", help="append one result row to this CSV file")
    p.set_defaults(fn=cmd_model)

    p = sub.add_parser("plan", help="choose relays from an RTT table (CSV src,dst,rtt_ms)")
    p.add_argument("rtt_csv")
    p.add_argument("--client", required=True)
    p.add_argument("--server", required=True)
    p.add_argument("--relays", help="comma-separated candidates (default: every other host)")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("relay", help="run a split relay on real sockets")
    _relay_args(p)
    p.set_defaults(fn=cmd_relay)

    lab = sub.add_parser("lab", help="netlab experiments").add_subparsers(dest="lab_cmd", required=True)
    for name, fn in (("run", cmd_lab_run), ("report", cmd_lab_report)):
        p = lab.add_parser(name)
        if name == "run":
            p.add_argument("matrix", help="matrix YAML file")
            p.add_argument("-o", "--output", default="records.csv", help="raw records CSV")
            p.add_argument("--repetitions", type=int)
        else:
            p.add_argument("records", help="raw records CSV from 'lab run'")
        p.add_argument("--summary", help="write the summary table here")
        p.add_argument("--improvement", help="write the improvement table here")
        p.add_argument("--baseline", default="e2e", help="STRATEGY[:FEATURES] to compare against")
        p.set_defaults(fn=fn)
    p = lab.add_parser("sim", help="one netlab transfer from a scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", help="write the event trace CSV here")
    p.set_defaults(fn=cmd_lab_sim)

    p = sub.add_parser("acceptance", help="run the acceptance checks; exit 1 if any fails")
    p.add_argument("only", nargs="*", type=int, help="criterion numbers (default: all)")
    p.set_defaults(fn=cmd_acceptance)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
