"""Closed-form timing for the ideal pipe, end-to-end TCP, an unsplit relay route and split TCP.

All durations are milliseconds. The split model is a critical-path evaluation of the
relay engine's event order: each event time carries the labelled delays that produced
it, so a TimingBreakdown's ttfb terms always sum to its ttfb exactly. Where two branches
join (for instance a request waiting for an upstream handshake), the later branch wins
and its terms are kept.

Completion adds the slow-start tail. Legs of a split connection stream concurrently, so
the tail is that of the slowest leg: for each leg, round k starts one leg RTT after
round k-1 (or when the link frees up, if serialization is longer) and the transfer ends
when the last batch has been serialized onto the bottleneck link of that leg.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .core_model import (
    BASELINE,
    FeatureSet,
    Role,
    SYSTEM_DEFAULTS,
    TimingBreakdown,
    Topology,
    TransportParams,
)
from .netlab.network import HEADER_BYTES

DEFAULT_FORK_DELAY_MS = 0.012


class Strategy(str, Enum):
    IDEAL = "ideal"
    E2E = "e2e"
    NOSPLIT_RELAY = "nosplit_relay"
    SPLIT = "split"


class FeatureError(ValueError):
    pass


# leg names used in Scenario.params_per_leg
E2E_LEG, CLIENT_LEG, CLOUD_LEG, SERVER_LEG = "e2e", "client", "cloud", "server"


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    strategy: Strategy
    file_size: int
    features: FeatureSet = BASELINE
    params_per_leg: Mapping[str, TransportParams] = field(default_factory=dict)
    turbo_params: TransportParams = field(default_factory=TransportParams.turbo)
    fork_delay: float = DEFAULT_FORK_DELAY_MS
    preamble_delay: float = 0.0
    delta_c: float = 0.0  # residual client-side delay, outside the relay's control
    delta_s: float = 0.0
    client: str | None = None
    server: str | None = None
    relays: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.file_size < 0 or (self.file_size == 0 and self.strategy != Strategy.IDEAL):
            raise ValueError(f"file_size must be >= 1, got {self.file_size}")

    @property
    def endpoints(self) -> tuple[str, str]:
        c = self.client or self.topology.by_role(Role.CLIENT)[0].id
        s = self.server or self.topology.by_role(Role.SERVER)[0].id
        return c, s

    @property
    def relay_pair(self) -> tuple[str, str]:
        """(rc, rs): explicit relays, else the relays ordered by RTT from the client."""
        if self.relays:
            rel = tuple(self.relays)
        else:
            c, _ = self.endpoints
            rel = tuple(sorted((h.id for h in self.topology.by_role(Role.RELAY)),
                               key=lambda r: (self.topology.rtt(c, r), r)))
        if len(rel) != 2:
            raise FeatureError(f"split needs exactly two relays, found {len(rel)}")
        return rel

    def leg_params(self, leg: str) -> TransportParams:
        if leg == CLOUD_LEG and self.features.turbo_start:
            return self.turbo_params
        return self.params_per_leg.get(leg, SYSTEM_DEFAULTS)


# --- slow start ---------------------------------------------------------------------

def slow_start_rounds(file_size: int, mss: int, init_cwnd: int) -> int:
    """Smallest r with mss * init_cwnd * (2**r - 1) >= file_size (at least 1)."""
    if file_size <= 0 or mss <= 0 or init_cwnd <= 0:
        raise ValueError("slow_start_rounds needs positive inputs")
    r = 1
    while mss * init_cwnd * (2 ** r - 1) < file_size:
        r += 1
    return r


def round_batches(file_size: int, mss: int, init_cwnd: int, cap: int | None = None) -> list[int]:
    """Payload bytes sent in each round: the window doubles per round, clipped to `cap` bytes."""
    cap_segs = max(1, cap // mss) if cap else None
    out = []
    left = file_size
    segs = init_cwnd
    while left > 0:
        w = segs if cap_segs is None else min(segs, cap_segs)
        b = min(left, w * mss)
        out.append(b)
        left -= b
        segs *= 2
    return out or [0]


def serialization_ms(nbytes: int, bandwidth: float, mss: int = 1460) -> float:
    """Time to clock `nbytes` of payload (plus per-segment headers) onto a link."""
    if nbytes <= 0 or math.isinf(bandwidth):
        return 0.0
    segs = -(-nbytes // mss)
    return (nbytes + segs * HEADER_BYTES) / bandwidth * 1000.0


def leg_tail(file_size: int, params: TransportParams, rtt: float, bandwidth: float) -> tuple[float, float]:
    """(round delay, final serialization) after the first byte of a leg has gone out."""
    batches = round_batches(file_size, params.mss, params.init_cwnd, params.window_cap)
    start = 0.0
    end = serialization_ms(batches[0], bandwidth, params.mss)
    for b in batches[1:]:
        start += rtt
        end = max(start, end) + serialization_ms(b, bandwidth, params.mss)
    return start, end - start


def rwnd_limited_throughput(rwnd: int, rtt: float) -> float:
    """Bytes per second a window-bound flow can sustain; rtt in ms."""
    if rwnd <= 0 or rtt <= 0:
        raise ValueError("rwnd and rtt must be positive")
    return rwnd / (rtt / 1000.0)


# --- critical path bookkeeping -------------------------------------------------------

@dataclass(frozen=True)
class _At:
    """An event time together with the labelled delays leading to it."""

    terms: tuple[tuple[str, float], ...] = ()

    @property
    def t(self) -> float:
        return math.fsum(d for _, d in self.terms)

    def then(self, label: str, d: float) -> "_At":
        return _At(self.terms + ((label, d),)) if d else self


def _latest(*events: _At) -> _At:
    best = events[0]
    for e in events[1:]:
        if e.t > best.t:
            best = e
    return best


# --- models --------------------------------------------------------------------------

def _rtt(s: Scenario, a: str, b: str, **kw) -> float:
    return s.topology.rtt(a, b, **kw)


def _tail_terms(s: Scenario, legs) -> tuple[tuple[str, float], ...]:
    worst = None
    for params, rtt, bw in legs:
        rounds, ser = leg_tail(s.file_size, params, rtt, bw)
        if worst is None or rounds + ser > worst[0] + worst[1]:
            worst = (rounds, ser)
    return tuple((lab, d) for lab, d in (("slow_start_round", worst[0]), ("serialization", worst[1])) if d)


def ideal_timing(s: Scenario) -> TimingBreakdown:
    """One RTT to the first byte, then the file at bottleneck bandwidth. Uses the relay route if any."""
    c, srv = s.endpoints
    via = tuple(s.relays) if s.relays else ()
    rtt = _rtt(s, c, srv, via=via)
    bw = s.topology.bottleneck(c, srv, via=via)
    ser = s.file_size / bw * 1000.0 if s.file_size and not math.isinf(bw) else 0.0
    tail = (("serialization", ser),) if ser else ()
    return TimingBreakdown((("request", rtt),), tail)


def _single_connection(s: Scenario, via=(), direct=False) -> TimingBreakdown:
    c, srv = s.endpoints
    rtt = _rtt(s, c, srv, via=via, direct=direct)
    bw = s.topology.bottleneck(c, srv, via=via, direct=direct)
    params = s.leg_params(E2E_LEG)
    return TimingBreakdown((("handshake", rtt), ("request", rtt)), _tail_terms(s, [(params, rtt, bw)]))


def e2e_timing(s: Scenario) -> TimingBreakdown:
    """Direct client-server TCP: handshake RTT + request RTT + slow-start tail."""
    return _single_connection(s, direct=True)


def nosplit_timing(s: Scenario) -> TimingBreakdown:
    """One TCP connection routed through the relays without terminating it."""
    return _single_connection(s, via=s.relay_pair)


def split_timing(s: Scenario) -> TimingBreakdown:
    c, srv = s.endpoints
    rc, rs = s.relay_pair
    fs = s.features
    a, b, cc = _rtt(s, c, rc), _rtt(s, rc, rs), _rtt(s, rs, srv)
    fork = 0.0 if fs.thread_pool else s.fork_delay
    t0 = _At()

    # client leg at rc
    syn_at_rc = t0.then("handshake", a / 2)
    req_at_rc = syn_at_rc.then("handshake", a / 2).then("request", a / 2)
    # with Early-SYN rc reacts to the SYN, otherwise to the completed accept (request rides along)
    dial_rc = (syn_at_rc if fs.early_syn else req_at_rc).then("fork", fork)

    # inner leg
    if fs.connection_pool:
        sent = dial_rc.then("preamble", s.preamble_delay)
        trigger_rs = sent.then("request", b / 2)
        req_at_rs = _latest(req_at_rc, sent).then("request", b / 2)
    else:
        syn_at_rs = dial_rc.then("relay_handshake", b / 2)
        up_rc = syn_at_rs.then("relay_handshake", b / 2)
        req_at_rs = _latest(req_at_rc, up_rc).then("request", b / 2)
        trigger_rs = syn_at_rs if fs.early_syn else req_at_rs

    # server leg
    up_rs = trigger_rs.then("fork", fork).then("handshake", cc)
    req_at_srv = _latest(req_at_rs, up_rs).then("request", cc / 2)
    first_byte = req_at_srv.then("request", (cc + b + a) / 2)
    ttfb_terms = first_byte.terms
    ttfb_terms += tuple((lab, d) for lab, d in (("handshake", s.delta_c), ("handshake", s.delta_s)) if d)

    legs = [
        (s.leg_params(SERVER_LEG), cc, s.topology.bottleneck(rs, srv)),
        (s.leg_params(CLOUD_LEG), b, s.topology.bottleneck(rc, rs)),
        (s.leg_params(CLIENT_LEG), a, s.topology.bottleneck(c, rc)),
    ]
    return TimingBreakdown(ttfb_terms, _tail_terms(s, legs))


def timing(s: Scenario) -> TimingBreakdown:
    return {
        Strategy.IDEAL: ideal_timing,
        Strategy.E2E: e2e_timing,
        Strategy.NOSPLIT_RELAY: nosplit_timing,
        Strategy.SPLIT: split_timing,
    }[s.strategy](s)
