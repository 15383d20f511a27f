"""Stream-transport adapters that expose simulated TCP connections to asyncio code."""

from __future__ import annotations

import asyncio

from ..core_model import TransportParams
from .network import Network
from .tcp import State, TcpConnection


class SimStream:
    def __init__(self, net: Network, conn: TcpConnection):
        self.net = net
        self.conn = conn

    @property
    def params(self) -> TransportParams:
        return self.conn.params

    @property
    def peer(self) -> tuple[str, int]:
        return (self.net.address(self.conn.raddr), self.conn.rport)

    @property
    def local(self) -> tuple[str, int]:
        return (self.net.address(self.conn.host), self.conn.lport)

    @property
    def nodelay(self) -> bool:
        return self.conn.nodelay

    @property
    def keepalive(self) -> bool:
        return self.conn.keepalive

    @property
    def closed(self) -> bool:
        return self.conn.state == State.CLOSED

    async def read(self, n: int = -1) -> bytes:
        return await self.conn.read(n)

    async def readexactly(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = await self.conn.read(n - len(buf))
            if not chunk:
                raise asyncio.IncompleteReadError(bytes(buf), n)
            buf += chunk
        return bytes(buf)

    def write(self, data: bytes) -> None:
        self.conn.write(data)

    async def drain(self) -> None:
        await self.conn.drain()

    async def settle(self) -> None:
        """Wait until everything written so far has been acknowledged by the peer."""
        await self.conn.drain(0)

    def write_eof(self) -> None:
        self.conn.write_eof()

    def close(self) -> None:
        self.conn.close()

    def abort(self) -> None:
        self.conn.abort()

    def set_nodelay(self, flag: bool = True) -> None:
        self.conn.nodelay = flag
        self.conn._try_send()

    def set_keepalive(self, flag: bool = True) -> None:
        self.conn.keepalive = flag

    def __repr__(self):
        return f"SimStream({self.conn.flow})"


class SimIncoming:
    """A connection attempt seen by a listener; accept() resolves once the handshake completes."""

    def __init__(self, net: Network, conn: TcpConnection):
        self.net = net
        self.conn = conn

    @property
    def peer(self) -> tuple[str, int]:
        return (self.net.address(self.conn.raddr), self.conn.rport)

    @property
    def local_port(self) -> int:
        return self.conn.lport

    async def accept(self) -> SimStream:
        await self.conn.established
        return SimStream(self.net, self.conn)


class SimServer:
    def __init__(self, listener):
        self.listener = listener

    @property
    def port(self) -> int:
        return self.listener.port

    def close(self) -> None:
        self.listener.close()

    async def wait_closed(self) -> None:
        pass


class SimHostNetwork:
    """Per-host view of a simulated network with the same surface as the real-socket backend."""

    supports_syn_hook = True

    def __init__(self, net: Network, host_id: str):
        self.net = net
        self.host_id = host_id
        self.stack = net.stacks[host_id]

    @property
    def address(self) -> str:
        return self.net.address(self.host_id)

    @property
    def loop(self):
        return self.net.loop

    def time(self) -> float:
        return self.net.loop.time()

    async def open_connection(self, host: str, port: int, params: TransportParams | None = None, *,
                              via=(), direct: bool = False) -> SimStream:
        dst = self.net.host_id(host)
        via = tuple(self.net.host_id(v) for v in via)
        conn = self.stack.open(dst, port, params or TransportParams(), via, direct)
        await conn.established
        return SimStream(self.net, conn)

    async def start_server(self, port: int, handler, *, params_for=None, syn_hook: bool = False) -> SimServer:
        def params_by_addr(src_host):
            if params_for is None:
                return TransportParams()
            return params_for(self.net.address(src_host))

        return SimServer(self.stack.listen(port, handler, params_by_addr, syn_hook))

    async def spawn_delay(self) -> None:
        await asyncio.sleep(self.net.fork_delay())
