import asyncio
import csv
import io

import pytest

from cloudsplit.core_model import BASELINE, PIED_PIPER, Host, Link, Role, Topology, TransportParams, three_leg_topology
from cloudsplit.netlab.fairness import fairness_topology, overlap_shares, run_fairness
from cloudsplit.netlab.loop import SimLoop, TimeLimitExceeded
from cloudsplit.netlab.network import TRACE_COLUMNS, Network, Packet
from cloudsplit.netlab.probe import inject_probe, measure_table, probe_rtt
from cloudsplit.netlab.scenarios import simulate
from cloudsplit.pipe_timing import Scenario, Strategy, timing

TOPO = three_leg_topology()
LOSSLESS = three_leg_topology(external_bw=1e10, cloud_bw=1e10, queue_capacity=10_000_000)
BIG = TransportParams(rwnd=64 << 20, send_buffer=64 << 20, recv_buffer=64 << 20)


def test_sim_loop_virtual_time():
    loop = SimLoop()
    seen = []

    async def main():
        await asyncio.sleep(5.0)
        seen.append(loop.time())
        await asyncio.sleep(0.25)
        return loop.time()

    assert loop.run_until_complete(main()) == pytest.approx(5.25)
    assert seen == [pytest.approx(5.0)]


def test_time_limit():
    loop = SimLoop()
    with pytest.raises(TimeLimitExceeded):
        loop.run_until_complete(asyncio.sleep(100), time_limit=10)
    loop2 = SimLoop()
    loop2.call_later(50, lambda: None)
    assert loop2.run_until_idle(time_limit=1.0) is False


def test_empty_scenario_has_empty_trace():
    net = Network(TOPO, trace=True)
    assert net.run_until_idle() == []
    assert net.loop.time() == 0.0 and not net.partial


def test_same_seed_same_trace():
    s = Scenario(three_leg_topology(external_loss=0.01), Strategy.SPLIT, 200_000, PIED_PIPER)
    a = simulate(s, seed=4, trace=True).net.trace
    b = simulate(s, seed=4, trace=True).net.trace
    c = simulate(s, seed=5, trace=True).net.trace
    assert a == b
    assert a != c


def test_trace_csv_columns():
    run = simulate(Scenario(TOPO, Strategy.E2E, 5000), trace=True)
    rows = list(csv.reader(io.StringIO(run.net.trace_csv())))
    assert tuple(rows[0]) == TRACE_COLUMNS
    events = {r[1].split(":")[0] for r in rows[1:]}
    assert {"send", "recv", "state"} <= events


def test_drop_tail_queue():
    t = Topology([Host("a", Role.CLIENT), Host("b", Role.SERVER)], [Link("a", "b", 1.0, 1000.0, queue_capacity=3)])
    net = Network(t, trace=True)
    route = net.route("a", "b")
    for i in range(5):
        net.send(Packet("a", 1, "b", 9, 0, seq=i, data=b"x" * 60, route=route))
    ch = net.channels["a", "b"]
    assert ch.sent == 3 and ch.dropped == 2
    assert sum(1 for ev in net.trace if ev.event == "drop") == 2


def test_lossless_lab_matches_model():
    for strat, fs in ((Strategy.E2E, BASELINE), (Strategy.NOSPLIT_RELAY, BASELINE), (Strategy.SPLIT, BASELINE),
                      (Strategy.SPLIT, PIED_PIPER)):
        s = Scenario(LOSSLESS, strat, 1_000_000, fs, {"client": BIG, "server": BIG, "cloud": BIG, "e2e": BIG})
        r = simulate(s).record
        assert r.ok
        assert r.completion == pytest.approx(timing(s).completion, abs=1.0)
        assert r.ttfb == pytest.approx(timing(s).ttfb, abs=1.0)


def test_receive_window_limits_throughput():
    small = TransportParams(rwnd=64 * 1024, recv_buffer=64 * 1024)
    s = Scenario(LOSSLESS, Strategy.E2E, 2_000_000, BASELINE, {"e2e": small})
    r = simulate(s).record
    assert r.mean_throughput == pytest.approx(64 * 1024 / 0.300, rel=0.1)


def test_probe_rtt_idle_queued_and_lost():
    net = Network(TOPO)
    assert net.loop.run_until_complete(inject_probe(net, "client", "rc")) == pytest.approx(32.7, abs=0.01)
    net.route("client", "rc")[0].occupy(0.010)
    assert net.loop.run_until_complete(inject_probe(net, "client", "rc")) == pytest.approx(42.7, abs=0.01)
    lossy = Network(three_leg_topology(external_loss=0.999999))
    assert lossy.loop.run_until_complete(inject_probe(lossy, "client", "rc")) is None


def test_probe_minimum_filters_jitter():
    net = Network(TOPO)
    v = net.loop.run_until_complete(probe_rtt(net, "client", "rc", n=20, interval_ms=100, jitter_ms=30))
    assert v == pytest.approx(32.7, abs=0.01)
    table = net.loop.run_until_complete(measure_table(net, [("client", "rc"), ("rc", "rs")], n=5))
    assert table["rc", "rs"] == pytest.approx(215.0, abs=0.05)


def test_overlap_shares_math():
    from cloudsplit.core_model import FlowRecord

    a = FlowRecord("a", 0, 0, 0, 0, [(0.0, 100.0), (1.0, 100.0), (2.0, 50.0)])
    b = FlowRecord("b", 0, 0, 0, 0, [(0.0, 300.0), (1.0, 100.0), (2.0, 10.0), (3.0, 1.0)])
    sa, sb, n = overlap_shares(a, b)
    assert n == 2 and sa == pytest.approx((0.25 + 0.5) / 2) and sa + sb == pytest.approx(1.0)


def test_fairness_symmetry_small():
    topo = fairness_topology()
    res = run_fairness(topo, same_rtt=True, size=4_000_000)
    assert res.long.ok and res.short.ok
    assert 0.4 <= res.long_share <= 0.6
