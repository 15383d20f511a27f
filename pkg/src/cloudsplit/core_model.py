"""Shared vocabulary: hosts, links, topologies, transport knobs and measurement records.

All durations are milliseconds and all sizes are bytes unless a name says otherwise.
"""

from __future__ import annotations

import ipaddress
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import networkx as nx


class Role(str, Enum):
    CLIENT = "client"
    SERVER = "server"
    RELAY = "relay"


class Zone(str, Enum):
    INTERNET = "internet"
    CLOUD = "cloud"


DEFAULT_QUEUE_CAPACITY = {Zone.INTERNET: 64, Zone.CLOUD: 1024}


@dataclass(frozen=True)
class Host:
    id: str
    role: Role
    zone: Zone = Zone.INTERNET
    address: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "zone", Zone(self.zone))


@dataclass(frozen=True)
class Link:
    """Full-duplex link; each direction gets its own drop-tail queue."""

    a: str
    b: str
    latency_ms: float
    bandwidth: float
    loss_rate: float = 0.0
    queue_capacity: int | None = None

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)

    @property
    def name(self) -> str:
        return f"{self.a}-{self.b}"


@dataclass(frozen=True)
class TransportParams:
    mss: int = 1460
    init_cwnd: int = 10
    rwnd: int = 6 * 1024 * 1024
    send_buffer: int = 4 * 1024 * 1024
    recv_buffer: int = 6 * 1024 * 1024
    nagle_enabled: bool = True
    turbo_start: bool = False

    @classmethod
    def turbo(cls, init_cwnd: int = 10_000, window: int = 64 * 1024 * 1024, base: "TransportParams | None" = None):
        base = base or cls()
        return replace(
            base,
            init_cwnd=init_cwnd,
            rwnd=window,
            send_buffer=window,
            recv_buffer=window,
            turbo_start=True,
        )

    @property
    def window_cap(self) -> int:
        """Most bytes this endpoint can keep in flight as a sender to a peer with the same params."""
        return min(self.rwnd, self.recv_buffer, self.send_buffer)

    def congestion_knobs(self) -> tuple:
        # Nagle only coalesces a sender's own writes; it is not part of the friendliness contract.
        return (self.mss, self.init_cwnd, self.rwnd, self.send_buffer, self.recv_buffer, self.turbo_start)

    def violations(self) -> list[str]:
        out = []
        if self.mss < 536:
            out.append(f"mss {self.mss} < 536")
        if self.init_cwnd < 1:
            out.append(f"init_cwnd {self.init_cwnd} < 1")
        if self.rwnd < self.mss:
            out.append(f"rwnd {self.rwnd} < mss {self.mss}")
        return out


SYSTEM_DEFAULTS = TransportParams()


@dataclass(frozen=True)
class FeatureSet:
    early_syn: bool = False
    thread_pool: bool = False
    connection_pool: bool = False
    turbo_start: bool = False

    @property
    def name(self) -> str:
        if all(self.flags()):
            return "Pied Piper"
        if not any(self.flags()):
            return "OCD Baseline"
        parts = [tag for tag, on in zip(("TP", "ES", "CP", "TS"), (
            self.thread_pool, self.early_syn, self.connection_pool, self.turbo_start)) if on]
        return "+" + "+".join(parts)

    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.early_syn, self.thread_pool, self.connection_pool, self.turbo_start)

    @classmethod
    def from_name(cls, name: str) -> "FeatureSet":
        for fs in ALL_FEATURE_SETS:
            if fs.name.lower() == name.lower():
                return fs
        raise ValueError(f"unknown feature set {name!r}")


BASELINE = FeatureSet()
PLUS_TP = FeatureSet(thread_pool=True)
PLUS_TP_ES = FeatureSet(thread_pool=True, early_syn=True)
PLUS_TP_ES_CP = FeatureSet(thread_pool=True, early_syn=True, connection_pool=True)
PIED_PIPER = FeatureSet(True, True, True, True)
LADDER = (BASELINE, PLUS_TP, PLUS_TP_ES, PLUS_TP_ES_CP, PIED_PIPER)
ALL_FEATURE_SETS = tuple(
    FeatureSet(es, tp, cp, ts)
    for es in (False, True) for tp in (False, True) for cp in (False, True) for ts in (False, True)
)


@dataclass
class Topology:
    hosts: dict[str, Host]
    links: tuple[Link, ...]
    pairs: tuple[tuple[str, str], ...] = ()

    def __init__(self, hosts: Iterable[Host], links: Iterable[Link], pairs: Iterable[Sequence[str]] = ()):
        self.hosts = {}
        for i, h in enumerate(hosts):
            if h.address is None:
                h = replace(h, address=str(ipaddress.IPv4Address("10.0.0.1") + i))
            if h.id in self.hosts:
                # keep the first; validate_topology reports the duplicate
                self._duplicates = getattr(self, "_duplicates", []) + [h.id]
                continue
            self.hosts[h.id] = h
        self.links = tuple(links)
        self.pairs = tuple(tuple(p) for p in pairs)
        self._graph = nx.Graph()
        self._graph.add_nodes_from(self.hosts)
        for ln in self.links:
            self._graph.add_edge(ln.a, ln.b, weight=ln.latency_ms, link=ln)

    def host(self, host_id: str) -> Host:
        return self.hosts[host_id]

    def host_by_address(self, address: str) -> Host:
        for h in self.hosts.values():
            if h.address == address:
                return h
        raise KeyError(address)

    def by_role(self, role: Role) -> list[Host]:
        return [h for h in self.hosts.values() if h.role == Role(role)]

    def link(self, a: str, b: str) -> Link:
        return self._graph.edges[a, b]["link"]

    def connected(self, a: str, b: str) -> bool:
        return a in self._graph and b in self._graph and nx.has_path(self._graph, a, b)

    def path(self, a: str, b: str, via: Sequence[str] = (), direct: bool = False) -> list[str]:
        """Lowest-latency host sequence from a to b, forced through the waypoints in order.

        direct=True routes over the Internet only, never transiting a relay.
        """
        g = self._graph
        if direct:
            g = g.subgraph([h for h in self.hosts if h in (a, b) or self.hosts[h].role != Role.RELAY])
        stops = [a, *via, b]
        out = [a]
        for src, dst in zip(stops, stops[1:]):
            try:
                seg = nx.shortest_path(g, src, dst, weight="weight")
            except (nx.NetworkXNoPath, nx.NodeNotFound) as exc:
                raise DisconnectedError(f"no path {src} -> {dst}") from exc
            out.extend(seg[1:])
        return out

    def path_links(self, hops: Sequence[str]) -> list[Link]:
        return [self.link(x, y) for x, y in zip(hops, hops[1:])]

    def rtt(self, a: str, b: str, via: Sequence[str] = (), direct: bool = False) -> float:
        if a == b and not via:
            return 0.0
        return 2.0 * math.fsum(ln.latency_ms for ln in self.path_links(self.path(a, b, via, direct)))

    def bottleneck(self, a: str, b: str, via: Sequence[str] = (), direct: bool = False) -> float:
        return min(ln.bandwidth for ln in self.path_links(self.path(a, b, via, direct)))

    def is_intra_cloud(self, a: str, b: str) -> bool:
        return self.hosts[a].zone == Zone.CLOUD and self.hosts[b].zone == Zone.CLOUD


class DisconnectedError(Exception):
    pass


@dataclass(frozen=True)
class TimingBreakdown:
    """TTFB and completion split into labelled terms; ttfb is the exact sum of ttfb_terms."""

    ttfb_terms: tuple[tuple[str, float], ...]
    tail_terms: tuple[tuple[str, float], ...] = ()

    LABELS = ("handshake", "request", "fork", "relay_handshake", "slow_start_round", "serialization", "preamble")

    @property
    def ttfb(self) -> float:
        return math.fsum(d for _, d in self.ttfb_terms)

    @property
    def completion(self) -> float:
        return math.fsum(d for _, d in self.ttfb_terms + self.tail_terms)

    @property
    def terms(self) -> list[tuple[str, float]]:
        return list(self.ttfb_terms + self.tail_terms)

    def total(self, label: str) -> float:
        return math.fsum(d for lab, d in self.terms if lab == label)

    def as_dict(self) -> dict:
        return {
            "ttfb_ms": self.ttfb,
            "completion_ms": self.completion,
            "terms": [{"label": lab, "ms": d, "ttfb": i < len(self.ttfb_terms)} for i, (lab, d) in enumerate(self.terms)],
        }


@dataclass
class FlowRecord:
    flow_id: str
    size: int
    bytes_transferred: int
    ttfb: float
    completion: float
    throughput_series: list[tuple[float, float]] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.bytes_transferred == self.size

    @property
    def mean_throughput(self) -> float:
        """Payload bytes/second between first and last byte."""
        span = (self.completion - self.ttfb) / 1000.0
        if span <= 0:
            return math.inf
        return self.bytes_transferred / span

    @classmethod
    def from_arrivals(cls, flow_id, size, start_s, arrivals, window_s=1.0, error=None):
        """Build a record from (time_s, nbytes) application deliveries."""
        got = sum(n for _, n in arrivals)
        if arrivals:
            ttfb = (arrivals[0][0] - start_s) * 1000.0
            completion = (arrivals[-1][0] - start_s) * 1000.0
        else:
            ttfb = completion = math.nan
        return cls(flow_id, size, got, ttfb, completion, windowed_throughput(arrivals, start_s, window_s), error)


def windowed_throughput(arrivals, start_s: float, window_s: float = 1.0) -> list[tuple[float, float]]:
    """Bytes/second per window, keyed by window start relative to start_s."""
    if not arrivals:
        return []
    last = arrivals[-1][0] - start_s
    nwin = int(last // window_s) + 1
    buckets = [0] * nwin
    for t, n in arrivals:
        buckets[min(int((t - start_s) // window_s), nwin - 1)] += n
    return [(i * window_s, b / window_s) for i, b in enumerate(buckets)]


def validate_topology(t: Topology, pairs: Iterable[Sequence[str]] | None = None) -> list[str]:
    out = [f"duplicate host id {h}" for h in getattr(t, "_duplicates", [])]
    for h in t.hosts.values():
        if h.role == Role.RELAY and h.zone != Zone.CLOUD:
            out.append(f"relay must be cloud: {h.id}")
    for ln in t.links:
        for end in ln.endpoints:
            if end not in t.hosts:
                out.append(f"link {ln.name}: unknown host {end}")
        if not ln.latency_ms > 0:
            out.append(f"link {ln.name}: one_way_latency must be > 0")
        if not ln.bandwidth > 0:
            out.append(f"link {ln.name}: bandwidth must be > 0")
        if not 0 <= ln.loss_rate < 1:
            out.append(f"link {ln.name}: loss_rate {ln.loss_rate} outside [0, 1)")
        if ln.queue_capacity is not None and ln.queue_capacity < 1:
            out.append(f"link {ln.name}: queue_capacity < 1")
    for a, b in (t.pairs if pairs is None else pairs):
        if not t.connected(a, b):
            out.append(f"pair {a}-{b} not connected")
    return out


def queue_capacity(t: Topology, ln: Link) -> int:
    if ln.queue_capacity is not None:
        return ln.queue_capacity
    zone = Zone.CLOUD if t.is_intra_cloud(ln.a, ln.b) else Zone.INTERNET
    return DEFAULT_QUEUE_CAPACITY[zone]


def three_leg_topology(
    rtt_client: float = 32.7,
    rtt_cloud: float = 215.0,
    rtt_server: float = 26.0,
    direct_rtt: float | None = 300.0,
    external_bw: float = 12.5e6,
    cloud_bw: float = 125e6,
    external_loss: float = 0.0,
    cloud_loss: float = 0.0,
    names: Sequence[str] = ("client", "rc", "rs", "server"),
    queue_capacity: int | None = None,
) -> Topology:
    """client - rc - rs - server chain, optionally with a direct client-server Internet path.

    Default RTTs: client-rc 32.7 ms, rc-rs 215 ms, rs-server 26 ms. queue_capacity
    overrides the per-zone drop-tail default on every link (large values give lossless runs).
    """
    c, rc, rs, s = names
    hosts = [
        Host(c, Role.CLIENT, Zone.INTERNET),
        Host(rc, Role.RELAY, Zone.CLOUD),
        Host(rs, Role.RELAY, Zone.CLOUD),
        Host(s, Role.SERVER, Zone.INTERNET),
    ]
    links = [
        Link(c, rc, rtt_client / 2, external_bw, external_loss, queue_capacity=queue_capacity),
        Link(rc, rs, rtt_cloud / 2, cloud_bw, cloud_loss, queue_capacity=queue_capacity),
        Link(rs, s, rtt_server / 2, external_bw, external_loss, queue_capacity=queue_capacity),
    ]
    if direct_rtt is not None:
        links.append(Link(c, s, direct_rtt / 2, external_bw, external_loss, queue_capacity=queue_capacity))
    return Topology(hosts, links, pairs=[(c, s)])
