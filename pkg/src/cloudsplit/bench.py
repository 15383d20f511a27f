"""Experiment matrices, CSV records, summary and improvement tables, and estimator sweeps.

Raw records CSV columns (one row per transfer):
    topology, strategy, features, size, rep, seed, ttfb_ms, completion_ms, bytes, throughput_Bps, error
Summary CSV columns (one row per cell):
    topology, strategy, features, size, runs, failures, ttfb_median_ms, completion_median_ms,
    ttfb_mean_ms, completion_mean_ms, throughput_mean_Bps
Improvement CSV columns:
    topology, strategy, features, size, baseline, ratio, regression

Timing statistics are medians (means alongside); throughput is a mean. Non-split
strategies have no feature set and use "-" in the features column.
"""

from __future__ import annotations

import asyncio
import csv
import io
import logging
import math
import random
import statistics
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from scipy import stats

from .core_model import LADDER, FeatureSet, Host, Link, Role, Topology, TransportParams, Zone
from .pipe_timing import Scenario, Strategy
from .relay_planner import estimate_midrelay_gain, estimate_nosplit_gain, plan_baseline

log = logging.getLogger(__name__)

DEFAULT_SIZES = (10_000, 100_000, 1_000_000, 10_000_000, 100_000_000)
MATRIX_STRATEGIES = (Strategy.E2E.value, Strategy.NOSPLIT_RELAY.value, Strategy.SPLIT.value)
MODES = ("netlab", "real_sockets")
NO_FEATURES = "-"

RECORD_COLUMNS = ("topology", "strategy", "features", "size", "rep", "seed", "ttfb_ms", "completion_ms", "bytes",
                  "throughput_Bps", "error")
SUMMARY_COLUMNS = ("topology", "strategy", "features", "size", "runs", "failures", "ttfb_median_ms",
                   "completion_median_ms", "ttfb_mean_ms", "completion_mean_ms", "throughput_mean_Bps")
IMPROVEMENT_COLUMNS = ("topology", "strategy", "features", "size", "baseline", "ratio", "regression")


@dataclass
class ExperimentMatrix:
    topologies: dict[str, Topology]
    strategies: tuple[str, ...] = MATRIX_STRATEGIES
    feature_sets: tuple[FeatureSet, ...] = LADDER
    sizes: tuple[int, ...] = DEFAULT_SIZES
    repetitions: int = 50
    mode: str = "netlab"
    seed: int = 0
    params: dict[str, TransportParams] = field(default_factory=dict)  # per leg, as in Scenario
    fork_jitter_ms: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.strategies = tuple(Strategy(s).value for s in self.strategies)
        if Strategy.IDEAL.value in self.strategies:
            raise ValueError("the ideal pipe is a model, not something to run")

    def cells(self) -> list[tuple[str, str, str, int]]:
        out = []
        for tname in self.topologies:
            for strat in self.strategies:
                fsets = [fs.name for fs in self.feature_sets] if strat == Strategy.SPLIT.value else [NO_FEATURES]
                for fname in fsets:
                    for size in self.sizes:
                        out.append((tname, strat, fname, size))
        return out

    def scenario(self, cell) -> Scenario:
        tname, strat, fname, size = cell
        fs = FeatureSet() if fname == NO_FEATURES else FeatureSet.from_name(fname)
        return Scenario(self.topologies[tname], strat, size, fs, dict(self.params))


def cell_seed(base: int, cell, rep: int) -> int:
    """Stable across processes and Python runs (no salted hash)."""
    return zlib.crc32(repr((base, cell, rep)).encode())


def _record_row(cell, rep, seed, rec=None, error=None) -> dict:
    tname, strat, fname, size = cell
    row = dict(topology=tname, strategy=strat, features=fname, size=size, rep=rep, seed=seed,
               ttfb_ms=math.nan, completion_ms=math.nan, bytes=0, throughput_Bps=math.nan, error="")
    if rec is not None:
        row.update(ttfb_ms=rec.ttfb, completion_ms=rec.completion, bytes=rec.bytes_transferred,
                   throughput_Bps=rec.mean_throughput, error=rec.error or ("" if rec.ok else "short"))
    if error:
        row["error"] = error
    return row


def _transfer(scenario: Scenario, mode: str, seed: int, fork_jitter_ms: float):
    if mode == "netlab":
        from .netlab.scenarios import simulate

        return simulate(scenario, seed=seed, fork_jitter_ms=fork_jitter_ms).record
    from .split_relay.loopback import real_transfer

    return asyncio.run(real_transfer(scenario, seed=seed))


def run_cell(m: ExperimentMatrix, cell) -> list[dict]:
    rows = []
    try:
        sc = m.scenario(cell)
    except Exception as exc:  # a bad cell is recorded, the matrix continues
        return [_record_row(cell, 0, m.seed, error=f"{type(exc).__name__}: {exc}")]
    for rep in range(m.repetitions):
        seed = cell_seed(m.seed, cell, rep)
        try:
            rec = _transfer(sc, m.mode, seed, m.fork_jitter_ms)
            rows.append(_record_row(cell, rep, seed, rec))
        except Exception as exc:
            log.warning("cell %s rep %d failed: %r", cell, rep, exc)
            rows.append(_record_row(cell, rep, seed, error=f"{type(exc).__name__}: {exc}"))
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def run_matrix(m: ExperimentMatrix) -> list[dict]:
    """Raw records for every cell, in cell order. Cells run in up to m.workers processes."""
    cells = m.cells()
    if m.workers <= 1 or len(cells) == 1:
        per_cell = [run_cell(m, c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=m.workers) as ex:
            per_cell = list(ex.map(_run_cell_args, [(m, c) for c in cells]))
    return [r for rows in per_cell for r in rows]


# --- reporting ------------------------------------------------------------------------

def _num(v) -> float:
    return float(v) if v not in ("", None) else math.nan


def summarize(records) -> list[dict]:
    """Per-cell statistics; a pure function of the records, so a saved CSV reproduces it."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        key = (r["topology"], r["strategy"], r["features"], int(r["size"]))
        groups.setdefault(key, []).append(r)
    out = []
    for key, rows in groups.items():
        good = [r for r in rows if not r["error"]]
        ttfb = [_num(r["ttfb_ms"]) for r in good]
        comp = [_num(r["completion_ms"]) for r in good]
        tput = [_num(r["throughput_Bps"]) for r in good if math.isfinite(_num(r["throughput_Bps"]))]

        def med(xs):
            return statistics.median(xs) if xs else math.nan

        def mean(xs):
            return math.fsum(xs) / len(xs) if xs else math.nan

        out.append(dict(zip(SUMMARY_COLUMNS, (*key, len(rows), len(rows) - len(good), med(ttfb), med(comp),
                                              mean(ttfb), mean(comp), mean(tput)))))
    return out


def improvement_report(summary, baseline_strategy: str = "e2e", baseline_features: str = NO_FEATURES) -> list[dict]:
    """completion(baseline) / completion(variant) per (topology, size); ratios below 1 are flagged."""
    base = {(r["topology"], int(r["size"])): _num(r["completion_median_ms"]) for r in summary
            if r["strategy"] == baseline_strategy and r["features"] == baseline_features}
    label = baseline_strategy if baseline_features == NO_FEATURES else f"{baseline_strategy}:{baseline_features}"
    out = []
    for r in summary:
        key = (r["topology"], int(r["size"]))
        if key not in base or not math.isfinite(base[key]):
            warnings.warn(f"no baseline {label} for {key}; cell skipped")
            continue
        comp = _num(r["completion_median_ms"])
        ratio = base[key] / comp if comp > 0 else math.nan
        out.append(dict(topology=r["topology"], strategy=r["strategy"], features=r["features"], size=int(r["size"]),
                        baseline=label, ratio=ratio, regression=bool(ratio < 1.0)))
    return out


def write_csv(rows, columns, out=None) -> str:
    buf = out if out is not None else io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue() if out is None else ""


def read_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# --- estimator sweeps -----------------------------------------------------------------

@dataclass
class SweepPoint:
    draw: int
    estimate: float
    gain: float
    rtts: dict


def _chain_topology(lat: dict, extra=(), bw: float = 125e6) -> Topology:
    """Hosts client, server and relays; `lat` maps (a, b) to a one-way latency in ms."""
    ids = {h for ab in lat for h in ab}
    hosts = [Host(h, Role.CLIENT if h == "client" else Role.SERVER if h == "server" else Role.RELAY,
                  Zone.INTERNET if h in ("client", "server") else Zone.CLOUD) for h in sorted(ids)]
    links = [Link(a, b, ms, bw, queue_capacity=100_000) for (a, b), ms in lat.items()]
    return Topology(hosts, links, pairs=[("client", "server")])


def _probe_table(topo: Topology, pairs, seed: int):
    from .netlab.network import Network
    from .netlab.probe import measure_table

    net = Network(topo, seed=seed)
    return net.loop.run_until_complete(measure_table(net, pairs, direct=True))


def _nosplit_draw(rng: random.Random, i: int, size: int, seed: int) -> SweepPoint:
    from .netlab.scenarios import simulate

    lat = {
        ("client", "rc"): rng.uniform(2.5, 30.0),
        ("rc", "rs"): rng.uniform(10.0, 125.0),
        ("rs", "server"): rng.uniform(2.5, 30.0),
        ("client", "server"): rng.uniform(25.0, 200.0),
    }
    topo = _chain_topology(lat)
    table = _probe_table(topo, [("client", "server"), ("client", "rc"), ("client", "rs"), ("rc", "rs"),
                                ("rc", "server"), ("rs", "server")], seed)
    rc, rs = plan_baseline("client", "server", ["rc", "rs"], table)
    if rc == rs:  # both picks landed on one relay; keep the chain order
        rc, rs = "rc", "rs"
    via = table.get("client", rc) + table.get(rc, rs) + table.get(rs, "server")
    est = estimate_nosplit_gain(table.get("client", "server"), via)
    e2e = simulate(Scenario(topo, Strategy.E2E, size), seed=seed).record
    nos = simulate(Scenario(topo, Strategy.NOSPLIT_RELAY, size, relays=(rc, rs)), seed=seed).record
    return SweepPoint(i, est, e2e.completion / nos.completion, {f"{a}-{b}": v for (a, b), v in table.entries.items()})


def _midrelay_draw(rng: random.Random, i: int, size: int, seed: int, features: FeatureSet) -> SweepPoint:
    from .netlab.scenarios import simulate_chain

    cm, ms = rng.uniform(10.0, 100.0), rng.uniform(10.0, 100.0)
    # keep the direct rc-rs path shorter than the detour so plain routing never uses the mid relay
    cs = rng.uniform(max(cm, ms) * 0.6, (cm + ms) * 0.98)
    lat = {("client", "rc"): rng.uniform(2.5, 20.0), ("rc", "rs"): cs, ("rs", "server"): rng.uniform(2.5, 20.0),
           ("rc", "mid"): cm, ("mid", "rs"): ms}
    topo = _chain_topology(lat)
    table = _probe_table(topo, [("rc", "rs"), ("rc", "mid"), ("mid", "rs")], seed)
    est = estimate_midrelay_gain(table.get("rc", "rs"), table.get("rc", "mid"), table.get("mid", "rs"))
    two = simulate_chain(topo, "client", "server", ["rc", "rs"], size, features, seed=seed).record
    three = simulate_chain(topo, "client", "server", ["rc", "mid", "rs"], size, features, seed=seed).record
    return SweepPoint(i, est, two.completion / three.completion, {f"{a}-{b}": v for (a, b), v in table.entries.items()})


SWEEP_FEATURES = FeatureSet(early_syn=True, thread_pool=True, connection_pool=True)  # no Turbo-Start: slow start matters


def rtt_sweep(kind: str = "nosplit", draws: int = 30, seed: int = 0, size: int = 1_000_000,
              features: FeatureSet = SWEEP_FEATURES) -> list[SweepPoint]:
    """Estimator value vs netlab-measured gain over random topologies.

    kind="nosplit": RTT ratio e2e / relay route vs completion(e2e) / completion(no-split relays).
    kind="midrelay": rc-rs RTT over the slower sub-leg vs completion(2-relay split) / completion(3-relay split).
    """
    rng = random.Random(f"sweep:{kind}:{seed}")
    out = []
    for i in range(draws):
        if kind == "nosplit":
            out.append(_nosplit_draw(rng, i, size, seed + i))
        elif kind == "midrelay":
            out.append(_midrelay_draw(rng, i, size, seed + i, features))
        else:
            raise ValueError(f"unknown sweep kind {kind!r}")
    return out


def spearman(points) -> float:
    est = [p.estimate for p in points]
    gain = [p.gain for p in points]
    if len(set(est)) < 2 or len(set(gain)) < 2:
        return math.nan
    return float(stats.spearmanr(est, gain).statistic)
