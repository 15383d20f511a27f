import math

import pytest
from hypothesis import given, settings, strategies as st

from cloudsplit.core_model import (
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
from cloudsplit.pipe_timing import (
    FeatureError,
    Scenario,
    Strategy,
    leg_tail,
    round_batches,
    rwnd_limited_throughput,
    serialization_ms,
    slow_start_rounds,
    split_timing,
    timing,
)

A, B, C, F = 32.7, 215.0, 26.0, 0.012
TOPO = three_leg_topology()


def ttfb(strategy, fs=BASELINE, size=10_000, **kw):
    return timing(Scenario(TOPO, strategy, size, fs, **kw)).ttfb


def test_slow_start_rounds():
    assert slow_start_rounds(1, 1460, 10) == 1
    assert slow_start_rounds(14_600, 1460, 10) == 1
    assert slow_start_rounds(14_601, 1460, 10) == 2
    assert slow_start_rounds(1_000_000, 1460, 10) == 7
    assert slow_start_rounds(10_000_000, 1460, 10) == 10
    with pytest.raises(ValueError):
        slow_start_rounds(0, 1460, 10)


def test_round_batches_double_and_respect_cap():
    assert round_batches(100_000, 1000, 10) == [10_000, 20_000, 40_000, 30_000]
    assert round_batches(100_000, 1000, 10, cap=25_000) == [10_000, 20_000, 25_000, 25_000, 20_000]


def test_serialization_counts_headers():
    assert serialization_ms(1460, 1500.0, 1460) == pytest.approx(1000.0)
    assert serialization_ms(0, 1e6) == 0.0


def test_ideal_pipe_ttfb_is_one_rtt():
    s = Scenario(TOPO, Strategy.IDEAL, 0, relays=("rc", "rs"))
    assert timing(s).ttfb == pytest.approx(A + B + C)
    assert timing(s).completion == timing(s).ttfb


def test_e2e_and_nosplit_are_two_rtts():
    assert ttfb(Strategy.E2E) == pytest.approx(600.0)
    assert ttfb(Strategy.NOSPLIT_RELAY) == pytest.approx(2 * (A + B + C))


def test_split_ladder_frozen_values():
    assert ttfb(Strategy.SPLIT, BASELINE) == pytest.approx(2 * (A + B + C) + 2 * F)
    assert ttfb(Strategy.SPLIT, PLUS_TP) == pytest.approx(2 * (A + B + C))
    assert ttfb(Strategy.SPLIT, PLUS_TP_ES) == pytest.approx(A + 2 * B + C)
    assert ttfb(Strategy.SPLIT, PLUS_TP_ES_CP) == pytest.approx(2 * A + B + C)
    assert ttfb(Strategy.SPLIT, PIED_PIPER) == pytest.approx(306.4)


def test_early_syn_delta_is_outer_legs():
    d = ttfb(Strategy.SPLIT, PLUS_TP) - ttfb(Strategy.SPLIT, PLUS_TP_ES)
    assert d == pytest.approx(58.7)
    assert round(d) == 59
    # without the worker pool the fork delays move with Early-SYN too
    d_notp = ttfb(Strategy.SPLIT, BASELINE) - ttfb(Strategy.SPLIT, FeatureSet(early_syn=True))
    assert d_notp == pytest.approx(A + C + F)


def test_connection_pool_delta_is_b_minus_a():
    d = ttfb(Strategy.SPLIT, PLUS_TP_ES) - ttfb(Strategy.SPLIT, PLUS_TP_ES_CP)
    assert d == pytest.approx(B - A)
    assert round(d) == 182


def test_connection_pool_alone():
    assert ttfb(Strategy.SPLIT, FeatureSet(connection_pool=True)) == pytest.approx(2 * A + B + 2 * C + 2 * F)


def test_split_needs_two_relays():
    t = three_leg_topology()
    with pytest.raises(FeatureError):
        Scenario(t, Strategy.SPLIT, 10, relays=("rc",)).relay_pair


def test_zero_size_only_for_ideal():
    with pytest.raises(ValueError):
        Scenario(TOPO, Strategy.SPLIT, 0)


def test_turbo_start_only_changes_cloud_leg():
    s = Scenario(TOPO, Strategy.SPLIT, 1_000_000, PIED_PIPER)
    assert s.leg_params("cloud").turbo_start
    assert not s.leg_params("client").turbo_start
    off = timing(Scenario(TOPO, Strategy.SPLIT, 1_000_000, PLUS_TP_ES_CP)).completion
    assert timing(s).completion < off


def test_leg_tail_single_round():
    rounds, ser = leg_tail(10_000, TransportParams(), 30.0, 12.5e6)
    assert rounds == 0.0 and ser == pytest.approx(serialization_ms(10_000, 12.5e6))


def test_rwnd_limited_throughput():
    assert rwnd_limited_throughput(65536, 273.7) == pytest.approx(65536 / 0.2737)
    with pytest.raises(ValueError):
        rwnd_limited_throughput(0, 10)


def test_terms_sum_to_ttfb_and_labels_known():
    for fs in LADDER:
        tb = split_timing(Scenario(TOPO, Strategy.SPLIT, 1_000_000, fs))
        assert math.fsum(d for _, d in tb.ttfb_terms) == tb.ttfb
        assert tb.ttfb <= tb.completion
        assert {lab for lab, _ in tb.terms} <= set(tb.LABELS)


def test_delta_terms_are_added():
    base = ttfb(Strategy.SPLIT, PIED_PIPER)
    assert ttfb(Strategy.SPLIT, PIED_PIPER, delta_c=5.0, delta_s=2.0) == pytest.approx(base + 7.0)


rtts = st.floats(min_value=1.0, max_value=400.0)
sizes = st.integers(min_value=1, max_value=50_000_000)


@settings(max_examples=60, deadline=None)
@given(a=rtts, b=rtts, c=rtts, size=sizes, extra=st.integers(min_value=0, max_value=5_000_000),
       fs=st.sampled_from(LADDER), strategy=st.sampled_from([Strategy.E2E, Strategy.NOSPLIT_RELAY, Strategy.SPLIT]))
def test_completion_monotone_in_size(a, b, c, size, extra, fs, strategy):
    t = three_leg_topology(a, b, c, direct_rtt=a + b + c)
    small = timing(Scenario(t, strategy, size, fs))
    big = timing(Scenario(t, strategy, size + extra, fs))
    assert big.completion >= small.completion - 1e-9
    assert small.ttfb <= small.completion


@settings(max_examples=60, deadline=None)
@given(a=rtts, b=rtts, c=rtts, size=sizes)
def test_ladder_never_slower(a, b, c, size):
    t = three_leg_topology(a, b, c)
    seq = [timing(Scenario(t, Strategy.SPLIT, size, fs)).completion for fs in LADDER]
    assert all(x >= y - 1e-9 for x, y in zip(seq, seq[1:]))
