import pytest
from hypothesis import given, settings, strategies as st

from cloudsplit.relay_planner import (
    RttTable,
    UnreachableError,
    ameasure_rtt,
    estimate_midrelay_gain,
    estimate_nosplit_gain,
    estimate_single_relay_split_gain,
    measure_rtt,
    plan_baseline,
    rank_mid_relays,
)


def test_table_keeps_minimum_and_is_symmetric():
    t = RttTable()
    t.record("a", "b", 30.0)
    t.record("b", "a", 20.0)
    t.record("a", "b", 25.0)
    assert t.get("a", "b") == t.get("b", "a") == 20.0
    assert ("b", "a") in t and ("a", "c") not in t
    with pytest.raises(KeyError):
        t.get("a", "c")


def test_csv_round_trip():
    t = RttTable.from_csv("src,dst,rtt_ms\n# comment\nclient,rc,32.7\nrc,rs,215\n")
    assert t["client", "rc"] == 32.7
    again = RttTable.from_csv(t.to_csv())
    assert again.entries == t.entries


def test_measure_rtt_takes_minimum_and_skips_failures():
    samples = iter([40.0, OSError("lost"), 31.0, 35.0])

    def probe():
        v = next(samples)
        if isinstance(v, Exception):
            raise v
        return v

    assert measure_rtt(probe, n=4, sleep=lambda _s: None) == 31.0


def test_measure_rtt_all_lost():
    def probe():
        raise TimeoutError("gone")

    with pytest.raises(UnreachableError):
        measure_rtt(probe, n=3, sleep=lambda _s: None)


def test_measure_rtt_spacing():
    slept = []
    measure_rtt(lambda: 1.0, n=20, interval=100, sleep=slept.append)
    assert slept == [0.1] * 19


def test_async_measure():
    import asyncio

    async def probe():
        return 12.5

    assert asyncio.run(ameasure_rtt(probe, n=3, interval=0)) == 12.5


def test_plan_baseline_picks_nearest_with_id_tie_break():
    t = RttTable.from_csv("client,r1,10\nclient,r2,10\nclient,r3,50\nserver,r1,90\nserver,r2,80\nserver,r3,5\n")
    assert plan_baseline("client", "server", ["r3", "r2", "r1"], t) == ("r1", "r3")
    with pytest.raises(ValueError):
        plan_baseline("client", "server", [], t)


def test_estimators():
    assert estimate_nosplit_gain(300.0, 273.7) == pytest.approx(300 / 273.7)
    assert estimate_midrelay_gain(200.0, 100.0, 80.0) == pytest.approx(2.0)
    assert estimate_single_relay_split_gain(1, 2, 3) is None
    with pytest.raises(ValueError):
        estimate_nosplit_gain(0, 1)


def test_equal_rtts_estimate_one():
    assert estimate_nosplit_gain(50.0, 50.0) == 1.0
    assert estimate_midrelay_gain(50.0, 50.0, 50.0) == 1.0


def test_rank_mid_relays():
    t = RttTable.from_csv("rc,rs,200\nrc,m1,100\nm1,rs,100\nrc,m2,150\nm2,rs,60\n")
    assert rank_mid_relays("rc", "rs", ["m2", "m1"], t) == [("m1", 2.0), ("m2", pytest.approx(200 / 150))]


pos = st.floats(min_value=0.1, max_value=1000.0)


@settings(max_examples=80)
@given(rtts=st.lists(st.tuples(pos, pos), min_size=1, max_size=6), k=st.floats(min_value=0.01, max_value=100))
def test_plan_invariant_under_uniform_scaling(rtts, k):
    t = RttTable()
    relays = [f"r{i}" for i in range(len(rtts))]
    for r, (to_c, to_s) in zip(relays, rtts):
        t.record("client", r, to_c)
        t.record("server", r, to_s)
    assert plan_baseline("client", "server", relays, t) == plan_baseline("client", "server", relays,
                                                                          t.scaled(lambda v: v * k))


@settings(max_examples=80)
@given(cs=pos, cm=pos, ms=pos)
def test_midrelay_estimate_bounds(cs, cm, ms):
    g = estimate_midrelay_gain(cs, cm, ms)
    assert g == pytest.approx(cs / max(cm, ms))
    # a mid relay helps by this measure only if both sub-legs are shorter than the direct leg
    assert (g > 1) == (max(cm, ms) < cs)
    # and the gain is at most what halving the leg would give when the detour is no longer than the leg
    if cm + ms <= cs:
        assert g <= cs / ((cm + ms) / 2) + 1e-9
