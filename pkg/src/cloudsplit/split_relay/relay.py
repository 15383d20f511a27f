"""Split-TCP relay: terminate each incoming stream, open the next leg, pump bytes both ways.

The relay only talks to a host-network object (netlab's SimHostNetwork or the
real-socket AsyncioNetwork), so the same code runs in virtual time and on sockets.

Per incoming connection:
  * two execution contexts are taken from the worker pool at once, one per pump
    direction (a fork-like delay each when the pool is off or dry);
  * with Early-SYN the upstream leg is dialed right away, overlapping the downstream
    handshake; without it the relay waits for the first payload bytes;
  * with connection pooling and a peer relay as next hop, an idle pooled connection
    is claimed and a preamble naming the final destination is written on it.
"""

from __future__ import annotations

import asyncio
import enum
import itertools
import json
import logging
from contextlib import suppress
from dataclasses import dataclass, field

from ..core_model import SYSTEM_DEFAULTS
from .config import RelayConfig, Route
from .pool import ConnectionPool, PeerUnreachable
from .preamble import ProtocolError, encode_preamble, read_preamble
from .workers import WorkerPool

log = logging.getLogger(__name__)

STREAM_ERRORS = (ConnectionError, OSError, asyncio.IncompleteReadError, asyncio.TimeoutError)


class ConnState(str, enum.Enum):
    DIALING = "dialing"
    ESTABLISHED = "established"
    HALF_CLOSED_DOWN = "half_closed_down"  # downstream finished sending
    HALF_CLOSED_UP = "half_closed_up"  # upstream finished sending
    CLOSED = "closed"


@dataclass
class SplitConnection:
    id: int
    downstream: object = None
    upstream: object = None
    dest: tuple[str, int] | None = None
    pooled: bool = False
    state: ConnState = ConnState.DIALING
    bytes_up: int = 0  # downstream -> upstream
    bytes_down: int = 0  # upstream -> downstream
    error: str | None = None
    _ended: set = field(default_factory=set)

    def ended(self, direction: str) -> None:
        self._ended.add(direction)
        if len(self._ended) == 2:
            self.state = ConnState.CLOSED
        else:
            self.state = ConnState.HALF_CLOSED_DOWN if direction == "up" else ConnState.HALF_CLOSED_UP


class Relay:
    settle_timeout = 30.0

    def __init__(self, net, config: RelayConfig):
        self.net = net
        self.config = config.validate()
        self.workers: WorkerPool | None = None
        self.pools: dict[str, ConnectionPool] = {}
        self.servers: list = []
        self.active: dict[int, SplitConnection] = {}
        self.completed = 0
        self.failed = 0
        self.bytes_up = 0
        self.bytes_down = 0
        self._ids = itertools.count(1)
        self._tasks: set[asyncio.Task] = set()

    # --- lifecycle ------------------------------------------------------------------
    async def start(self) -> "Relay":
        await self.listen()
        await self.fill_pools()
        return self

    async def listen(self) -> None:
        """Spawn the worker pool and open every listening port."""
        cfg = self.config
        fs = cfg.features
        if fs.thread_pool:
            high = max(cfg.worker_pool_size, cfg.pool_high_watermark)
            self.workers = WorkerPool(self.net.spawn_delay, cfg.worker_pool_size, cfg.worker_pool_size, high)
        else:
            self.workers = WorkerPool(self.net.spawn_delay, 0, 0, 0)
        await self.workers.start()
        syn_hook = fs.early_syn and getattr(self.net, "supports_syn_hook", False)
        try:
            for route in cfg.routes:
                srv = await self.net.start_server(route.listen_port, self._route_handler(route),
                                                  params_for=cfg.params_for, syn_hook=syn_hook)
                self.servers.append(srv)
            if cfg.peer_relays:
                self.servers.append(await self.net.start_server(cfg.pool_port, self._on_pooled,
                                                                params_for=cfg.params_for))
            if cfg.status_port is not None:
                self.servers.append(await self.net.start_server(cfg.status_port, self._on_status))
        except OSError:
            await self.close()
            raise
        log.info("%s listening: %d routes, features %s", cfg.name, len(cfg.routes), fs.name)

    async def fill_pools(self) -> None:
        """Open low_watermark pooled connections to every peer; an unreachable peer is fatal."""
        cfg = self.config
        if not cfg.features.connection_pool:
            return
        for peer in cfg.peer_relays:
            pool = ConnectionPool(self.net, peer, cfg.pool_port, cfg.cloud_params,
                                  cfg.pool_low_watermark, cfg.pool_high_watermark)
            try:
                await pool.start()
            except PeerUnreachable:
                await self.close()
                raise
            self.pools[peer] = pool

    async def close(self) -> None:
        for srv in self.servers:
            srv.close()
            await srv.wait_closed()
        self.servers.clear()
        for pool in self.pools.values():
            pool.close()
        if self.workers is not None:
            self.workers.close()
        for t in list(self._tasks):
            t.cancel()

    # --- accept paths ---------------------------------------------------------------
    def _route_handler(self, route: Route):
        async def handler(incoming):
            await self._track(self._on_incoming(route, incoming))
        return handler

    async def _track(self, coro):
        task = asyncio.current_task()
        self._tasks.add(task)
        try:
            await coro
        finally:
            self._tasks.discard(task)

    async def _acquire_pair(self):
        return await asyncio.gather(self.workers.acquire(), self.workers.acquire())

    def _new_conn(self, dest) -> SplitConnection:
        sc = SplitConnection(next(self._ids), dest=dest)
        self.active[sc.id] = sc
        return sc

    async def _on_incoming(self, route: Route, incoming) -> None:
        fs = self.config.features
        sc = self._new_conn(route.dest)
        workers_t = asyncio.ensure_future(self._acquire_pair())
        down = up = None
        first = b""
        try:
            if fs.early_syn:
                accept_t = asyncio.ensure_future(incoming.accept())
                await workers_t
                try:
                    up = await self._dial(route, sc)
                except STREAM_ERRORS:
                    with suppress(*STREAM_ERRORS):
                        (await accept_t).abort()
                    raise
                down = await accept_t
            else:
                down = await incoming.accept()
                down.set_nodelay(True)
                first = await down.read(self.config.forward_buffer)
                await workers_t
                if not first:
                    down.close()
                    sc.state = ConnState.CLOSED
                    return
                up = await self._dial(route, sc)
            down.set_nodelay(True)
            await self._forward(sc, down, up, first)
        except STREAM_ERRORS as exc:
            self._fail(sc, exc, down, up)
        finally:
            await self._finish(sc, workers_t)

    async def _on_pooled(self, incoming) -> None:
        """A peer's pooled connection: wait for its preamble, then dial the named destination."""
        down = await incoming.accept()
        down.set_nodelay(True)
        down.set_keepalive(True)
        try:
            dest, extra = await read_preamble(down)
        except ProtocolError as exc:
            log.warning("%s: dropping pooled connection from %s: %s", self.config.name, down.peer, exc)
            down.abort()
            return
        except STREAM_ERRORS:
            down.abort()
            return  # idle pooled connection torn down
        await self._track(self._serve_pooled(down, dest, extra))

    async def _serve_pooled(self, down, dest, extra: bytes) -> None:
        sc = self._new_conn(dest)
        sc.pooled = True
        workers_t = asyncio.ensure_future(self._acquire_pair())
        up = None
        try:
            await workers_t
            up = await self.net.open_connection(dest[0], dest[1], self.config.params_for(dest[0]))
            up.set_nodelay(True)
            await self._forward(sc, down, up, extra)
        except STREAM_ERRORS as exc:
            self._fail(sc, exc, down, up)
        finally:
            await self._finish(sc, workers_t)

    async def _dial(self, route: Route, sc: SplitConnection):
        cfg = self.config
        hop = route.next_hop
        if hop is not None and cfg.features.connection_pool and hop[0] in self.pools:
            pool = self.pools[hop[0]]
            s = pool.claim()
            if s is None:
                log.info("%s: pool to %s empty, dialing fresh", cfg.name, hop[0])
                s = await pool.fresh()
            sc.pooled = True
            s.write(encode_preamble(*route.dest))
            sc.upstream = s
            return s
        host, port = hop or route.dest
        s = await self.net.open_connection(host, port, cfg.params_for(host))
        s.set_nodelay(True)
        sc.upstream = s
        return s

    def _fail(self, sc: SplitConnection, exc, down, up) -> None:
        sc.error = f"{type(exc).__name__}: {exc}"
        sc.state = ConnState.CLOSED
        self.failed += 1
        log.debug("%s: connection %d failed: %s", self.config.name, sc.id, sc.error)
        for s in (down, up):
            if s is not None:
                s.abort()

    async def _finish(self, sc: SplitConnection, workers_t) -> None:
        self.active.pop(sc.id, None)
        if not workers_t.done():
            with suppress(asyncio.CancelledError):
                await workers_t
        if not workers_t.cancelled() and workers_t.exception() is None:
            for w in workers_t.result():
                self.workers.release(w)

    # --- forwarding -----------------------------------------------------------------
    async def _forward(self, sc: SplitConnection, down, up, first: bytes = b"") -> None:
        sc.downstream, sc.upstream = down, up
        sc.state = ConnState.ESTABLISHED
        if first:
            up.write(first)
            sc.bytes_up += len(first)
            self.bytes_up += len(first)
        await asyncio.gather(self._pump(sc, down, up, "up"), self._pump(sc, up, down, "down"))
        down.close()
        up.close()
        if sc.error is None:
            self.completed += 1
        else:
            self.failed += 1

    async def _pump(self, sc: SplitConnection, src, dst, direction: str) -> None:
        size = self.config.forward_buffer
        while True:
            try:
                data = await src.read(size)
            except STREAM_ERRORS as exc:
                # src broke: what it delivered has been forwarded; let it land, then pass the reset on
                sc.error = sc.error or f"{direction}: {type(exc).__name__}"
                with suppress(*STREAM_ERRORS):
                    await asyncio.wait_for(dst.settle(), self.settle_timeout)
                dst.abort()
                break
            if not data:
                with suppress(*STREAM_ERRORS):
                    dst.write_eof()
                break
            try:
                dst.write(data)
                if direction == "up":
                    sc.bytes_up += len(data)
                    self.bytes_up += len(data)
                else:
                    sc.bytes_down += len(data)
                    self.bytes_down += len(data)
                await dst.drain()
            except STREAM_ERRORS as exc:
                sc.error = sc.error or f"{direction}: {type(exc).__name__}"
                src.abort()
                break
        sc.ended(direction)

    # --- introspection --------------------------------------------------------------
    def legs(self) -> list[dict]:
        out = []
        for sc in self.active.values():
            for side, s in (("downstream", sc.downstream), ("upstream", sc.upstream)):
                if s is None:
                    continue
                host = s.peer[0]
                out.append({
                    "conn": sc.id,
                    "side": side,
                    "peer": f"{host}:{s.peer[1]}",
                    "zone": "cloud" if self.config.is_peer(host) else "internet",
                    "params": _params_dict(s.params),
                })
        return out

    def friendliness_violations(self) -> list[str]:
        """Internet-facing legs must carry default congestion parameters."""
        out = []
        for sc in self.active.values():
            for s in (sc.downstream, sc.upstream):
                if s is None or self.config.is_peer(s.peer[0]):
                    continue
                if s.params is not None and s.params.congestion_knobs() != SYSTEM_DEFAULTS.congestion_knobs():
                    out.append(f"connection {sc.id}: non-default parameters towards {s.peer[0]}")
        return out

    def pooled_connection_count(self) -> int:
        return sum(len(p.idle) for p in self.pools.values())

    def status(self) -> dict:
        cfg = self.config
        return {
            "name": cfg.name,
            "features": cfg.features.name,
            "routes": [str(r) for r in cfg.routes],
            "active_connections": len(self.active),
            "completed": self.completed,
            "failed": self.failed,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "workers": self.workers.stats() if self.workers else None,
            "pools": {peer: p.stats() for peer, p in self.pools.items()},
            "pooled_idle": self.pooled_connection_count(),
            "params": {"external": _params_dict(cfg.external_params), "intra_cloud": _params_dict(cfg.cloud_params)},
            "legs": self.legs(),
            "friendliness_violations": self.friendliness_violations(),
        }

    async def _on_status(self, incoming) -> None:
        s = await incoming.accept()
        try:
            s.write(json.dumps(self.status(), indent=2).encode() + b"\n")
            await s.drain()
            s.write_eof()
            while await s.read(4096):
                pass
        except STREAM_ERRORS:
            pass
        s.close()


def _params_dict(p) -> dict | None:
    if p is None:
        return None
    return {
        "mss": p.mss,
        "init_cwnd": p.init_cwnd,
        "rwnd": p.rwnd,
        "send_buffer": p.send_buffer,
        "recv_buffer": p.recv_buffer,
        "nagle_enabled": p.nagle_enabled,
        "turbo_start": p.turbo_start,
    }


async def start_relay(net, config: RelayConfig) -> Relay:
    return await Relay(net, config).start()
