"""Packets, drop-tail channels and the simulated network that wires hosts together."""

from __future__ import annotations

import collections
import csv
import io
import random
from dataclasses import dataclass

from ..core_model import Topology, TransportParams, queue_capacity
from .loop import SimLoop

HEADER_BYTES = 40

SYN, ACK, FIN, RST, PROBE = 1, 2, 4, 8, 16


class Packet:
    __slots__ = ("src", "sport", "dst", "dport", "flags", "seq", "ack", "data", "wnd", "ts", "ts_echo", "route", "hop")

    def __init__(self, src, sport, dst, dport, flags, seq=0, ack=0, data=b"", wnd=0, ts=0.0, ts_echo=0.0, route=()):
        self.src = src
        self.sport = sport
        self.dst = dst
        self.dport = dport
        self.flags = flags
        self.seq = seq
        self.ack = ack
        self.data = data
        self.wnd = wnd
        self.ts = ts
        self.ts_echo = ts_echo
        self.route = route
        self.hop = 0

    @property
    def wire_size(self) -> int:
        return len(self.data) + HEADER_BYTES

    def __repr__(self):
        names = "".join(n for bit, n in ((SYN, "S"), (ACK, "A"), (FIN, "F"), (RST, "R"), (PROBE, "P")) if self.flags & bit)
        return f"<{self.src}:{self.sport}>{self.dst}:{self.dport} {names} seq={self.seq} ack={self.ack} len={len(self.data)}>"


class Channel:
    """One direction of a link: FIFO drop-tail queue, serialization at `bandwidth`, then latency."""

    def __init__(self, net: "Network", src: str, dst: str, latency_s: float, bandwidth: float,
                 loss_rate: float, capacity: int, rng: random.Random):
        self.net = net
        self.src = src
        self.dst = dst
        self.latency = latency_s
        self.bandwidth = bandwidth
        self.loss_rate = loss_rate
        self.capacity = capacity
        self.rng = rng
        self._tx_end: collections.deque = collections.deque()
        self.busy_until = 0.0
        self.sent = 0
        self.dropped = 0
        self.bytes_sent = 0

    @property
    def name(self):
        return f"{self.src}->{self.dst}"

    def backlog(self, now: float) -> int:
        q = self._tx_end
        while q and q[0] <= now:
            q.popleft()
        return len(q)

    def occupy(self, seconds: float) -> None:
        """Pretend cross traffic already queued: delays the next packet by `seconds`."""
        now = self.net.loop.time()
        self.busy_until = max(self.busy_until, now) + seconds

    def enter(self, pkt: Packet) -> None:
        loop = self.net.loop
        now = loop._now
        if self.backlog(now) >= self.capacity or (self.loss_rate and self.rng.random() < self.loss_rate):
            self.dropped += 1
            self.net.on_drop(self, pkt)
            return
        start = self.busy_until if self.busy_until > now else now
        end = start + pkt.wire_size / self.bandwidth
        self.busy_until = end
        self._tx_end.append(end)
        self.sent += 1
        self.bytes_sent += pkt.wire_size
        loop.schedule(end + self.latency, self.net.arrive, pkt)


TRACE_COLUMNS = ("time", "event", "flow", "cwnd", "bytes")


@dataclass
class TraceEvent:
    time: float
    event: str
    flow: str
    cwnd: float
    bytes: int

    def row(self):
        return (f"{self.time:.9f}", self.event, self.flow, f"{self.cwnd:.3f}", self.bytes)


class Network:
    """The simulated world: one SimLoop, one channel per link direction, one TCP stack per host."""

    def __init__(self, topology: Topology, seed: int = 0, loop: SimLoop | None = None, trace: bool = False,
                 fork_delay_ms: float = 0.012, fork_jitter_ms: float = 0.0):
        from .tcp import TcpStack  # circular at import time

        self.topology = topology
        self.loop = loop or SimLoop()
        self.seed = seed
        self.rng = random.Random(f"netlab:{seed}")
        self.tracing = trace
        self.trace: list[TraceEvent] = []
        self.fork_delay_ms = fork_delay_ms
        self.fork_jitter_ms = fork_jitter_ms
        self.channels: dict[tuple[str, str], Channel] = {}
        for ln in topology.links:
            cap = queue_capacity(topology, ln)
            for a, b in ((ln.a, ln.b), (ln.b, ln.a)):
                rng = random.Random(f"{seed}:{a}->{b}")
                self.channels[a, b] = Channel(self, a, b, ln.latency_ms / 1000.0, ln.bandwidth, ln.loss_rate, cap, rng)
        self.stacks = {hid: TcpStack(self, h) for hid, h in topology.hosts.items()}
        self._addr = {h.address: hid for hid, h in topology.hosts.items()}
        self._routes: dict = {}

    # addressing and routing
    def host_id(self, address: str) -> str:
        if address in self.stacks:
            return address
        return self._addr[address]

    def address(self, host_id: str) -> str:
        return self.topology.hosts[host_id].address

    def route(self, src: str, dst: str, via=(), direct: bool = False) -> list[Channel]:
        key = (src, dst, tuple(via), direct)
        r = self._routes.get(key)
        if r is None:
            hops = self.topology.path(src, dst, via, direct)
            r = self._routes[key] = [self.channels[a, b] for a, b in zip(hops, hops[1:])]
        return r

    def reverse(self, route: list[Channel]) -> list[Channel]:
        return [self.channels[ch.dst, ch.src] for ch in reversed(route)]

    def host(self, host_id: str):
        from .transport import SimHostNetwork
        return SimHostNetwork(self, host_id)

    # packet movement
    def send(self, pkt: Packet) -> None:
        if self.tracing:
            self.record("send", pkt)
        pkt.hop = 0
        if not pkt.route:
            self.loop.schedule(self.loop._now, self.arrive_final, pkt)
            return
        pkt.route[0].enter(pkt)

    def arrive(self, pkt: Packet) -> None:
        pkt.hop += 1
        if pkt.hop < len(pkt.route):
            pkt.route[pkt.hop].enter(pkt)
        else:
            self.arrive_final(pkt)

    def arrive_final(self, pkt: Packet) -> None:
        if self.tracing:
            self.record("recv", pkt)
        self.stacks[pkt.dst].receive(pkt)

    def on_drop(self, ch: Channel, pkt: Packet) -> None:
        if self.tracing:
            self.record("drop", pkt)

    # tracing
    def record(self, event: str, pkt: Packet | None = None, flow: str = "", cwnd: float = 0.0, nbytes: int = 0):
        if pkt is not None:
            flow = f"{pkt.src}:{pkt.sport}>{pkt.dst}:{pkt.dport}"
            nbytes = len(pkt.data)
            if pkt.flags & (SYN | FIN | RST):
                event = event + ":" + "".join(n for bit, n in ((SYN, "S"), (FIN, "F"), (RST, "R")) if pkt.flags & bit)
            conn = self.stacks[pkt.src].conns.get((pkt.sport, pkt.dst, pkt.dport))
            cwnd = conn.cwnd if conn is not None else 0.0
        self.trace.append(TraceEvent(self.loop.time(), event, flow, cwnd, nbytes))

    def trace_csv(self, out=None) -> str:
        """Write the trace as CSV (time, event, flow, cwnd, bytes); returns the text if no file is given."""
        buf = out if out is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for ev in self.trace:
            w.writerow(ev.row())
        return buf.getvalue() if out is None else ""

    def fork_delay(self) -> float:
        """Seconds needed to create a fresh execution context."""
        d = self.fork_delay_ms
        if self.fork_jitter_ms:
            d += self.rng.expovariate(1.0 / self.fork_jitter_ms)
        return d / 1000.0

    def run_until_idle(self, time_limit: float | None = None) -> list[TraceEvent]:
        complete = self.loop.run_until_idle(time_limit)
        self.partial = not complete
        return self.trace

    def params_check(self, params: TransportParams | None) -> TransportParams:
        return params or TransportParams()
