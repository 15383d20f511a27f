"""The eleven acceptance checks, runnable from the CLI and from pytest.

Each check returns a Result; a check passes only if its assertion holds and it finished
inside its runtime budget. Frozen reference values are computed from the topology
constants below, never copied from a run.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from dataclasses import dataclass, field, replace

from .apps import payload
from .bench import ExperimentMatrix, improvement_report, run_matrix, rtt_sweep, spearman, summarize
from .core_model import (
    ALL_FEATURE_SETS,
    BASELINE,
    LADDER,
    PIED_PIPER,
    PLUS_TP,
    PLUS_TP_ES,
    PLUS_TP_ES_CP,
    FeatureSet,
    TransportParams,
    three_leg_topology,
)
from .pipe_timing import Scenario, Strategy, rwnd_limited_throughput, serialization_ms, slow_start_rounds, timing

A, B, C = 32.7, 215.0, 26.0  # client-rc, rc-rs, rs-server RTTs (ms)
MSS, INIT_CWND = 1460, 10
BIG_BUFFERS = TransportParams(rwnd=64 << 20, send_buffer=64 << 20, recv_buffer=64 << 20)


@dataclass
class Result:
    number: int
    title: str
    passed: bool
    detail: str
    elapsed_s: float = 0.0
    budget_s: float = math.inf
    data: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.passed and self.elapsed_s <= self.budget_s

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        over = "" if self.elapsed_s <= self.budget_s else f" (over budget {self.budget_s:g}s)"
        return f"[{status}] criterion {self.number:2d} {self.title}: {self.detail} [{self.elapsed_s:.1f}s{over}]"


def lossless_topology(**kw):
    """The three-leg chain with effectively unlimited bandwidth and queues."""
    return three_leg_topology(A, B, C, external_bw=1e10, cloud_bw=1e10, queue_capacity=10_000_000, **kw)


def _legs(p: TransportParams) -> dict:
    return {"client": p, "cloud": p, "server": p, "e2e": p}


def _pair(fs_on, fs_off, size=10_000):
    from .netlab.scenarios import simulate

    topo = lossless_topology()
    on, off = (Scenario(topo, Strategy.SPLIT, size, fs, _legs(BIG_BUFFERS)) for fs in (fs_on, fs_off))
    model = timing(off).ttfb - timing(on).ttfb
    lab = simulate(off).record.ttfb - simulate(on).record.ttfb
    return model, lab


def check_early_syn() -> Result:
    model, lab = _pair(PLUS_TP_ES, PLUS_TP)
    expected = A + C  # the client and server handshakes now overlap the inner one
    ok = abs(model - expected) < 1e-9 and abs(lab - model) <= 1.0 and round(model) == 59
    return Result(1, "Early-SYN delta", ok, f"model {model:.4f} ms (want {expected:.1f}), netlab {lab:.4f} ms",
                  data={"model": model, "lab": lab})


def check_connection_pool() -> Result:
    model, lab = _pair(PLUS_TP_ES_CP, PLUS_TP_ES)
    expected = B - A  # 182.3; rounds to the 182 ms quoted for it
    ok = abs(model - expected) < 1e-9 and round(model) == 182 and abs(lab - model) <= 2.0
    return Result(2, "connection-pool delta", ok,
                  f"model {model:.4f} ms (B-A = {expected:.1f}, rounds to {round(model)}), netlab {lab:.4f} ms",
                  data={"model": model, "lab": lab})


def check_single_burst() -> Result:
    from .netlab.scenarios import simulate

    topo = three_leg_topology(A, B, C)
    bound = serialization_ms(7 * MSS, topo.bottleneck("client", "rc"), MSS)
    worst = 0.0
    runs = [(Strategy.E2E, BASELINE), (Strategy.NOSPLIT_RELAY, BASELINE)] + [(Strategy.SPLIT, fs) for fs in LADDER]
    for strat, fs in runs:
        r = simulate(Scenario(topo, strat, 10_000, fs)).record
        worst = max(worst, r.completion - r.ttfb) if r.ok else math.inf
    return Result(3, "single-burst 10 KB", worst <= bound,
                  f"worst completion-ttfb {worst:.3f} ms <= 7-segment serialization {bound:.3f} ms",
                  data={"worst": worst, "bound": bound})


ORDER = [("e2e", "-"), ("nosplit_relay", "-")] + [("split", fs.name) for fs in LADDER]


def check_turbo_start() -> Result:
    topo = lossless_topology()
    sizes = (100_000, 1_000_000, 10_000_000)
    m = ExperimentMatrix({"chain": topo}, feature_sets=LADDER + (FeatureSet(turbo_start=True),), sizes=sizes,
                         repetitions=1, params=_legs(BIG_BUFFERS))
    summary = summarize(run_matrix(m))
    med = {(r["strategy"], r["features"], int(r["size"])): float(r["completion_median_ms"]) for r in summary}
    notes, ok = [], True
    for size in (1_000_000, 10_000_000):
        need = (slow_start_rounds(size, MSS, INIT_CWND) - 1) * B
        got = med[("split", BASELINE.name, size)] - med[("split", "+TS", size)]
        ok &= got >= need
        notes.append(f"{size // 1000} KB saves {got:.1f} ms (need {need:.0f})")
    for size in sizes:
        seq = [med[(s, f, size)] for s, f in ORDER]
        ordered = seq[0] > seq[1] and all(x >= y for x, y in zip(seq[1:], seq[2:]))
        ok &= ordered
        notes.append(f"order@{size // 1000}KB {'ok' if ordered else 'broken'}")
    return Result(4, "Turbo-Start", ok, "; ".join(notes), data={"median": med})


def check_small_file() -> Result:
    from .netlab.scenarios import simulate

    topo = three_leg_topology(A, B, C)
    e2e = simulate(Scenario(topo, Strategy.E2E, 10_000)).record.completion
    base = simulate(Scenario(topo, Strategy.SPLIT, 10_000, BASELINE)).record.completion
    pp = simulate(Scenario(topo, Strategy.SPLIT, 10_000, PIED_PIPER)).record.completion
    flagged = improvement_report([
        {"topology": "t", "strategy": "e2e", "features": "-", "size": 10_000, "completion_median_ms": e2e},
        {"topology": "t", "strategy": "split", "features": BASELINE.name, "size": 10_000, "completion_median_ms": base},
    ])
    regression = [r for r in flagged if r["regression"]]
    return Result(5, "small-file regression", pp <= 1.05 * e2e,
                  f"e2e {e2e:.1f}, baseline split {base:.1f}{' (flagged)' if regression else ''}, Pied Piper {pp:.1f} ms")


def check_rwnd_limited() -> Result:
    from .netlab.scenarios import simulate

    topo = lossless_topology()
    small = replace(TransportParams(), rwnd=64 * 1024, recv_buffer=64 * 1024)
    legs = {"client": small, "e2e": small}
    slow = simulate(Scenario(topo, Strategy.NOSPLIT_RELAY, 10_000_000, BASELINE, legs)).record
    fast = simulate(Scenario(topo, Strategy.SPLIT, 10_000_000, PIED_PIPER, legs)).record
    rtt = topo.rtt("client", "server", via=("rc", "rs"))
    want = rwnd_limited_throughput(64 * 1024, rtt)
    err = abs(slow.mean_throughput - want) / want
    ratio = slow.completion / fast.completion
    ok = slow.ok and fast.ok and err <= 0.10 and ratio > 4
    return Result(6, "rwnd-limited client", ok,
                  f"throughput {slow.mean_throughput / 1e3:.1f} kB/s vs rwnd/RTT {want / 1e3:.1f} ({err:.1%}); "
                  f"split speed-up {ratio:.2f}x", data={"err": err, "ratio": ratio})


def check_fairness() -> Result:
    from .netlab.fairness import run_fairness

    plain = run_fairness(split=False, seed=0)
    split = run_fairness(split=True, features=PIED_PIPER, seed=0)
    ok = (plain.long_share < plain.short_share
          and all(0.35 <= x <= 0.65 for x in (split.long_share, split.short_share)))
    return Result(7, "fairness restoration", ok,
                  f"unsplit long/short {plain.long_share:.3f}/{plain.short_share:.3f}; "
                  f"Pied Piper {split.long_share:.3f}/{split.short_share:.3f}")


GRID_RTT_SCALES = (0.25, 0.5, 1.0, 2.0)
GRID_SIZES = (10_000, 100_000, 1_000_000, 10_000_000)
GRID_CWNDS = (10, 40)


def check_oracle_grid() -> Result:
    from .netlab.scenarios import simulate

    worst, cells, bad = 0.0, 0, []
    for k in GRID_RTT_SCALES:
        topo = three_leg_topology(A * k, B * k, C * k, external_bw=1e10, cloud_bw=1e10, queue_capacity=10_000_000)
        quantum = serialization_ms(MSS, 1e10, MSS)
        for size in GRID_SIZES:
            for cw in GRID_CWNDS:
                p = replace(BIG_BUFFERS, init_cwnd=cw)
                for fs in LADDER:
                    s = Scenario(topo, Strategy.SPLIT, size, fs, _legs(p))
                    lab = simulate(s).record
                    diff = abs(lab.completion - timing(s).completion)
                    cells += 1
                    worst = max(worst, diff)
                    if not lab.ok or diff > quantum + 1.0:
                        bad.append((k, size, cw, fs.name, round(diff, 3)))
    return Result(8, "oracle equivalence", not bad,
                  f"{cells} cells, worst |model-lab| {worst * 1000:.1f} us, {len(bad)} outside tolerance",
                  data={"bad": bad})


def check_integrity(n: int = 1000, seed: int = 7) -> Result:
    from .netlab.scenarios import simulate

    rng = random.Random(seed)
    topo = three_leg_topology(A, B, C, external_loss=0.001, cloud_loss=0.0001)
    mismatched, aborted, completed = [], 0, 0
    for i in range(n):
        size = max(1, int(math.exp(rng.uniform(0.0, math.log(10_000_000)))))
        fs = rng.choice(ALL_FEATURE_SETS)
        abort_at = rng.randrange(size) if rng.random() < 0.10 else -1
        run = simulate(Scenario(topo, Strategy.SPLIT, size, fs), seed=i, abort_at=abort_at,
                       keep_data=abort_at >= 0)
        rec = run.record
        if abort_at >= 0:
            aborted += 1
            data = run.data
            if data is None or data != payload(size, i)[:len(data)] or len(data) > abort_at or rec.ok:
                mismatched.append((i, size, fs.name, abort_at, rec.bytes_transferred))
        else:
            completed += 1
            want = hashlib.sha256(payload(size, i)).hexdigest()
            if not rec.ok or run.digest != want:
                mismatched.append((i, size, fs.name, -1, rec.bytes_transferred))
    return Result(9, "stream integrity", not mismatched,
                  f"{completed} complete + {aborted} aborted transfers, {len(mismatched)} mismatches",
                  data={"mismatched": mismatched})


V4_VECTOR = ("192.0.2.1", 8080, bytes.fromhex("4f434431" "04" "c0000201" "1f90"))
V6_VECTOR = ("2001:db8::1", 443, bytes.fromhex("4f434431" "06" "20010db8000000000000000000000001" "01bb"))


def check_preamble() -> Result:
    from .split_relay.preamble import ProtocolError, decode_preamble, encode_preamble

    fails = []
    for host, port, wire in (V4_VECTOR, V6_VECTOR):
        if encode_preamble(host, port) != wire:
            fails.append(f"encode {host}")
        if decode_preamble(wire + b"xy") != ((host, port), len(wire)):
            fails.append(f"decode {host}")
        if any(decode_preamble(wire[:k]) is not None for k in range(len(wire))):
            fails.append(f"truncation {host}")
    for bad in (b"XCD1\x04\xc0\x00\x02\x01\x1f\x90", b"OCD1\x05" + bytes(6), b"OX"):
        try:
            decode_preamble(bad)
            fails.append(f"accepted {bad.hex()}")
        except ProtocolError:
            pass
    return Result(10, "preamble golden vectors", not fails, "all vectors match" if not fails else ", ".join(fails))


def check_estimators(draws: int = 30) -> Result:
    rho_ns = spearman(rtt_sweep("nosplit", draws, seed=0))
    rho_mid = spearman(rtt_sweep("midrelay", draws, seed=0))
    ok = rho_ns > 0.5 and rho_mid > 0
    return Result(11, "estimator correlation", ok, f"spearman no-split {rho_ns:.3f} (> 0.5), 3-relay {rho_mid:.3f} (> 0)",
                  data={"nosplit": rho_ns, "midrelay": rho_mid})


CHECKS = {
    1: (check_early_syn, 1.0),
    2: (check_connection_pool, 1.0),
    3: (check_single_burst, 1.0),
    4: (check_turbo_start, 30.0),
    5: (check_small_file, 5.0),
    6: (check_rwnd_limited, 30.0),
    7: (check_fairness, 60.0),
    8: (check_oracle_grid, 120.0),
    9: (check_integrity, 300.0),
    10: (check_preamble, 1.0),
    11: (check_estimators, 120.0),
}


def run_check(number: int) -> Result:
    fn, budget = CHECKS[number]
    t = time.perf_counter()
    try:
        res = fn()
    except Exception as exc:  # a crash is a failure, reported like any other
        res = Result(number, fn.__name__, False, f"raised {type(exc).__name__}: {exc}")
    res.elapsed_s = time.perf_counter() - t
    res.budget_s = budget
    return res


def run_all(numbers=None, out=print) -> list[Result]:
    results = []
    for n in numbers or sorted(CHECKS):
        r = run_check(n)
        if out:
            out(r.line())
        results.append(r)
    return results
