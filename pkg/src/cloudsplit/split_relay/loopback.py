"""Loopback smoke-test tier: real sockets between 127.0.0.x hosts with injected latency.

Every host gets its own loopback address. Writes are held back by the one-way latency
to the peer before they reach the kernel, and connects wait one RTT, so handshakes and
request/response exchanges see the topology's delays. Bandwidth, loss and the kernel's
congestion control are not emulated; numbers from this tier are a smoke check only.
"""

from __future__ import annotations

import asyncio
import collections
import ipaddress
from typing import Callable

from ..apps import ContentServer, fetch
from ..core_model import FlowRecord, Topology
from ..pipe_timing import CLIENT_LEG, E2E_LEG, SERVER_LEG, Scenario, Strategy
from .config import RelayConfig, Route
from .relay import Relay
from .sockets import AsyncioNetwork, AsyncioStream

_EOF, _CLOSE = object(), object()


class DelayedStream:
    """Wraps an AsyncioStream and delivers each write `delay` seconds late, in order."""

    def __init__(self, inner: AsyncioStream, delay: float, limit: int = 4 << 20):
        self.inner = inner
        self.delay = delay
        self.limit = limit
        self._q: collections.deque = collections.deque()
        self._pending = 0
        self._wake = asyncio.Event()
        self._idle = asyncio.Event()
        self._idle.set()
        self._room = asyncio.Event()
        self._room.set()
        self._error: BaseException | None = None
        self._task = asyncio.get_running_loop().create_task(self._pump())

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def _put(self, item, n: int = 0) -> None:
        if self._error is not None:
            raise ConnectionResetError(str(self._error))
        self._q.append((asyncio.get_running_loop().time() + self.delay, item))
        self._pending += n
        if self._pending > self.limit:
            self._room.clear()
        self._idle.clear()
        self._wake.set()

    async def _pump(self):
        loop = asyncio.get_running_loop()
        try:
            while True:
                while not self._q:
                    self._idle.set()
                    self._wake.clear()
                    await self._wake.wait()
                due, item = self._q[0]
                if due > loop.time():
                    await asyncio.sleep(due - loop.time())
                self._q.popleft()
                if item is _EOF:
                    self.inner.write_eof()
                elif item is _CLOSE:
                    self.inner.close()
                else:
                    self.inner.write(item)
                    self._pending -= len(item)
                    await self.inner.drain()
                    if self._pending <= self.limit:
                        self._room.set()
        except (ConnectionError, OSError) as exc:
            self._error = exc
            self._room.set()
            self._idle.set()

    def write(self, data: bytes) -> None:
        if data:
            self._put(bytes(data), len(data))

    async def drain(self) -> None:
        await self._room.wait()
        if self._error is not None:
            raise ConnectionResetError(str(self._error))

    async def settle(self) -> None:
        await self._idle.wait()
        await self.inner.settle()

    def write_eof(self) -> None:
        if self._error is None:
            self._put(_EOF)

    def close(self) -> None:
        if self._error is None and not self._task.done():
            self._put(_CLOSE)
        else:
            self.inner.close()

    def abort(self) -> None:
        self._task.cancel()
        self._q.clear()
        self.inner.abort()

    async def read(self, n: int = -1) -> bytes:
        return await self.inner.read(n)

    async def readexactly(self, n: int) -> bytes:
        return await self.inner.readexactly(n)


class _DelayedIncoming:
    def __init__(self, incoming, delay: float):
        self._incoming = incoming
        self.delay = delay
        self.local_port = incoming.local_port

    @property
    def peer(self):
        return self._incoming.peer

    async def accept(self):
        return DelayedStream(await self._incoming.accept(), self.delay)


class DelayedNetwork(AsyncioNetwork):
    """AsyncioNetwork whose connections carry one_way_ms(peer_address) of latency each way."""

    def __init__(self, bind: str, one_way_ms: Callable[[str], float], **kw):
        super().__init__(bind, **kw)
        self.one_way_ms = one_way_ms

    async def open_connection(self, host, port, params=None, **route):
        d = self.one_way_ms(host) / 1000.0
        s = await super().open_connection(host, port, params, **route)
        await asyncio.sleep(2 * d)  # SYN out, SYN-ACK back
        return DelayedStream(s, d)

    async def start_server(self, port, handler, *, params_for=None, syn_hook=False):
        async def wrapped(incoming):
            await handler(_DelayedIncoming(incoming, self.one_way_ms(incoming.peer[0]) / 1000.0))

        return await super().start_server(port, wrapped, params_for=params_for, syn_hook=syn_hook)


def loopback_addresses(topology: Topology, base: str = "127.0.0.10") -> dict[str, str]:
    start = ipaddress.IPv4Address(base)
    return {hid: str(start + i) for i, hid in enumerate(sorted(topology.hosts))}


async def real_transfer(s: Scenario, *, seed: int = 0, server_port: int = 18000, proxy_port: int = 18080,
                        pool_port: int = 17000) -> FlowRecord:
    """Run the scenario's transfer over loopback sockets with relays for the split strategy."""
    if s.strategy == Strategy.IDEAL:
        raise ValueError("the ideal pipe has no protocol to run")
    topo = s.topology
    addr = loopback_addresses(topo)
    host_of = {a: h for h, a in addr.items()}
    c, srv = s.endpoints
    kw = {}
    if s.strategy == Strategy.E2E:
        kw = {"direct": True}
    elif s.strategy == Strategy.NOSPLIT_RELAY:
        kw = {"via": s.relay_pair}

    def one_way(me):
        def f(peer_addr):
            peer = host_of.get(peer_addr)
            if peer is None:
                return 0.0
            if {me, peer} == {c, srv}:
                return topo.rtt(c, srv, **kw) / 2  # via order runs from the client
            return topo.rtt(me, peer) / 2
        return f

    split = s.strategy == Strategy.SPLIT
    client_p = s.leg_params(CLIENT_LEG if split else E2E_LEG)
    server_p = s.leg_params(SERVER_LEG if split else E2E_LEG)
    content = ContentServer(seed=seed)
    server = await DelayedNetwork(addr[srv], one_way(srv)).start_server(server_port, content.handle,
                                                                          params_for=lambda _a: server_p)
    relays = []
    try:
        if split:
            rc, rs = s.relay_pair
            dest = (addr[srv], server_port)
            for name, hop, peer, ext in ((rs, None, rc, server_p), (rc, (addr[rs], proxy_port), rs, client_p)):
                cfg = RelayConfig(addr[name], (Route(proxy_port, dest, hop),), (addr[peer],), pool_port=pool_port,
                                  features=s.features, external_params=ext, intra_cloud_params=s.turbo_params,
                                  plain_cloud_params=s.params_per_leg.get("cloud"), friendly=False, name=name)
                relay = Relay(DelayedNetwork(addr[name], one_way(name), fork_delay_ms=s.fork_delay), cfg)
                await relay.listen()
                relays.append(relay)
            for relay in relays:
                await relay.fill_pools()
            target = (addr[rc], proxy_port)
        else:
            target = (addr[srv], server_port)
        client = DelayedNetwork(addr[c], one_way(c), bind_outgoing=True)
        res = await fetch(client, target[0], target[1], s.file_size, params=client_p, flow_id=s.strategy.value)
        return res.record
    finally:
        for relay in relays:
            await relay.close()
        server.close()
        await server.wait_closed()
