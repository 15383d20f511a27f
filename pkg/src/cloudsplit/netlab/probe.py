"""Handshake-style RTT probes and probe-based RTT tables."""

from __future__ import annotations

import asyncio
import itertools
import random

from ..relay_planner import RttTable, ameasure_rtt
from .network import SYN, Network, Packet

PROBE_TIMEOUT_S = 3.0
_ports = itertools.count()


async def inject_probe(net: Network, a: str, b: str, timeout: float = PROBE_TIMEOUT_S,
                       direct: bool = False) -> float | None:
    """Send a SYN from a to a closed port on b and time the reset that comes back.

    Returns the round trip in ms under the current queue state, or None if the probe
    or its reply was lost.
    """
    stack = net.stacks[a]
    sport = 60000 + next(_ports) % 5000
    fut = net.loop.create_future()
    stack.probes[sport] = fut
    start = net.loop.time()
    route = net.route(a, b, direct=direct)
    net.send(Packet(a, sport, b, 0, SYN, route=route, ts=start))
    try:
        end = await asyncio.wait_for(fut, timeout)
    except asyncio.TimeoutError:
        stack.probes.pop(sport, None)
        return None
    return (end - start) * 1000.0


async def probe_rtt(net: Network, a: str, b: str, n: int = 20, interval_ms: float = 100.0,
                    jitter_ms: float = 0.0, rng: random.Random | None = None, direct: bool = False) -> float:
    """Minimum over n probes. jitter_ms adds random cross-traffic queueing before half of them."""
    rng = rng or random.Random(f"probe:{a}:{b}")

    async def one():
        if jitter_ms and rng.random() < 0.5:
            net.route(a, b, direct=direct)[0].occupy(rng.uniform(0.0, jitter_ms) / 1000.0)
        r = await inject_probe(net, a, b, direct=direct)
        if r is None:
            raise asyncio.TimeoutError(f"probe {a}->{b} lost")
        return r

    return await ameasure_rtt(one, n, interval_ms)


async def measure_table(net: Network, pairs, n: int = 20, interval_ms: float = 100.0, jitter_ms: float = 0.0,
                        direct: bool = False) -> RttTable:
    """Probe every (a, b) pair concurrently and collect the minima.

    direct=True keeps relays from acting as routers, so each probe sees the plain Internet path.
    """
    pairs = list(pairs)
    vals = await asyncio.gather(*(probe_rtt(net, a, b, n, interval_ms, jitter_ms, direct=direct) for a, b in pairs))
    t = RttTable(probe_count=n, probe_interval=interval_ms)
    for (a, b), v in zip(pairs, vals):
        t.record(a, b, v)
    return t
