import math

import pytest

from cloudsplit.core_model import (
    ALL_FEATURE_SETS,
    BASELINE,
    LADDER,
    PIED_PIPER,
    FeatureSet,
    FlowRecord,
    Host,
    Link,
    Role,
    Topology,
    TransportParams,
    Zone,
    three_leg_topology,
    validate_topology,
    windowed_throughput,
)


def chain(**link_kw):
    hosts = [Host("client", Role.CLIENT), Host("rc", Role.RELAY, Zone.CLOUD),
             Host("rs", Role.RELAY, Zone.CLOUD), Host("server", Role.SERVER)]
    links = [Link("client", "rc", 16.35, 1e7), Link("rc", "rs", 107.5, 1e8, **link_kw), Link("rs", "server", 13.0, 1e7)]
    return Topology(hosts, links, pairs=[("client", "server")])


def test_well_formed_chain_has_no_violations():
    assert validate_topology(chain()) == []


def test_loss_rate_one_is_a_violation_naming_the_link():
    v = validate_topology(chain(loss_rate=1.0))
    assert len(v) == 1 and "rc-rs" in v[0]


def test_relay_outside_cloud_is_reported():
    t = Topology([Host("client", Role.CLIENT), Host("r", Role.RELAY, Zone.INTERNET), Host("server", Role.SERVER)],
                 [Link("client", "r", 5, 1e6), Link("r", "server", 5, 1e6)])
    assert validate_topology(t) == ["relay must be cloud: r"]


def test_disconnected_pair_and_duplicate_host():
    t = Topology([Host("client", Role.CLIENT), Host("server", Role.SERVER), Host("server", Role.SERVER)], [],
                 pairs=[("client", "server")])
    v = validate_topology(t)
    assert "duplicate host id server" in v
    assert "pair client-server not connected" in v


def test_rtt_is_derived_and_symmetric():
    t = three_leg_topology()
    via = t.rtt("client", "server", via=("rc", "rs"))
    assert via == pytest.approx(273.7)
    assert round(via) == 274
    for a in t.hosts:
        for b in t.hosts:
            assert t.rtt(a, b) == pytest.approx(t.rtt(b, a))
    assert t.rtt("client", "server", direct=True) == pytest.approx(300.0)


def test_direct_path_never_transits_relays():
    t = three_leg_topology(direct_rtt=None)
    assert not t.connected("client", "server") or t.path("client", "server") == ["client", "rc", "rs", "server"]
    with pytest.raises(Exception):
        t.path("client", "server", direct=True)


def test_intra_cloud_and_default_queues():
    t = three_leg_topology()
    assert t.is_intra_cloud("rc", "rs")
    assert not t.is_intra_cloud("client", "rc")


def test_transport_defaults_and_turbo():
    p = TransportParams()
    assert (p.mss, p.init_cwnd) == (1460, 10)
    assert p.violations() == []
    tp = TransportParams.turbo()
    assert tp.turbo_start and tp.init_cwnd > p.init_cwnd and tp.window_cap >= p.window_cap
    bad = TransportParams(mss=100, init_cwnd=0, rwnd=50)
    assert len(bad.violations()) == 3


def test_feature_set_names():
    assert PIED_PIPER.name == "Pied Piper"
    assert BASELINE.name == "OCD Baseline"
    assert [fs.name for fs in LADDER] == ["OCD Baseline", "+TP", "+TP+ES", "+TP+ES+CP", "Pied Piper"]
    assert len({fs.name for fs in ALL_FEATURE_SETS}) == 16
    assert FeatureSet.from_name("pied piper") is not None
    with pytest.raises(ValueError):
        FeatureSet.from_name("warp drive")


def test_flow_record_from_arrivals():
    arrivals = [(1.1, 100), (1.6, 100), (2.3, 300)]
    r = FlowRecord.from_arrivals("f", 500, 1.0, arrivals, window_s=1.0)
    assert r.ok
    assert r.ttfb == pytest.approx(100.0)
    assert r.completion == pytest.approx(1300.0)
    assert r.mean_throughput == pytest.approx(500 / 1.2)
    assert r.throughput_series == [(0.0, 200.0), (1.0, 300.0)]
    assert all(v >= 0 for _, v in r.throughput_series)


def test_short_flow_is_not_ok():
    r = FlowRecord.from_arrivals("f", 500, 0.0, [(0.5, 10)])
    assert not r.ok
    empty = FlowRecord.from_arrivals("f", 500, 0.0, [])
    assert math.isnan(empty.ttfb) and windowed_throughput([], 0.0) == []
