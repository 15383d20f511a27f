"""Real-socket host network with the same surface as netlab's SimHostNetwork.

Only Nagle (TCP_NODELAY) and keep-alive are applied to the kernel sockets; congestion
window and receive window remain under kernel control. Early-SYN cannot see a SYN
through the socket API, so relays act on accept instead (supports_syn_hook = False).
"""

from __future__ import annotations

import array
import asyncio
import fcntl
import socket
import struct
import termios

from ..core_model import TransportParams


def _unsent_bytes(sock) -> int | None:
    """Bytes still queued in the kernel send buffer (Linux TIOCOUTQ); None if unknown."""
    try:
        buf = array.array("i", [0])
        fcntl.ioctl(sock.fileno(), termios.TIOCOUTQ, buf)
        return buf[0]
    except (OSError, AttributeError, ValueError):
        return None


class AsyncioStream:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, params: TransportParams | None = None):
        self.reader = reader
        self.writer = writer
        self.params = params or TransportParams()
        self._sock = writer.get_extra_info("socket")
        self.nodelay = False
        self.keepalive = False

    @property
    def peer(self) -> tuple[str, int]:
        return tuple(self.writer.get_extra_info("peername")[:2])

    @property
    def local(self) -> tuple[str, int]:
        return tuple(self.writer.get_extra_info("sockname")[:2])

    @property
    def closed(self) -> bool:
        return self.writer.is_closing() or self.reader.at_eof()

    async def read(self, n: int = -1) -> bytes:
        return await self.reader.read(n if n > 0 else 65536)

    async def readexactly(self, n: int) -> bytes:
        return await self.reader.readexactly(n)

    def write(self, data: bytes) -> None:
        if self.writer.is_closing():
            raise ConnectionResetError("write on closed stream")
        self.writer.write(data)

    async def drain(self) -> None:
        await self.writer.drain()

    async def settle(self, poll: float = 0.002) -> None:
        """Wait until userspace and kernel send queues are empty."""
        await self.writer.drain()
        while self._sock is not None and not self.writer.is_closing():
            left = _unsent_bytes(self._sock)
            if not left:
                return
            await asyncio.sleep(poll)

    def write_eof(self) -> None:
        if not self.writer.is_closing() and self.writer.can_write_eof():
            self.writer.write_eof()

    def close(self) -> None:
        self.writer.close()

    def abort(self) -> None:
        if self._sock is not None and self._sock.fileno() >= 0:
            # linger 0 turns the close into a reset, matching netlab's abort
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0))
        self.writer.transport.abort()

    def set_nodelay(self, flag: bool = True) -> None:
        self.nodelay = flag
        if self._sock is not None:
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, int(flag))

    def set_keepalive(self, flag: bool = True) -> None:
        self.keepalive = flag
        if self._sock is not None:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_KEEPALIVE, int(flag))

    def __repr__(self):
        return f"AsyncioStream({self.local}->{self.peer})"


class AsyncioIncoming:
    def __init__(self, stream: AsyncioStream, local_port: int):
        self._stream = stream
        self.local_port = local_port

    @property
    def peer(self) -> tuple[str, int]:
        return self._stream.peer

    async def accept(self) -> AsyncioStream:
        return self._stream


class AsyncioServer:
    def __init__(self, server: asyncio.base_events.Server):
        self.server = server

    @property
    def port(self) -> int:
        return self.server.sockets[0].getsockname()[1]

    def close(self) -> None:
        self.server.close()

    async def wait_closed(self) -> None:
        await self.server.wait_closed()


class AsyncioNetwork:
    supports_syn_hook = False

    def __init__(self, bind: str = "127.0.0.1", fork_delay_ms: float = 0.012, limit: int = 1 << 20,
                 bind_outgoing: bool = True):
        self.address = bind
        self.bind_outgoing = bind_outgoing  # so peers see this relay's own address as the source
        self.fork_delay_ms = fork_delay_ms
        self.limit = limit

    def time(self) -> float:
        return asyncio.get_running_loop().time()

    async def open_connection(self, host: str, port: int, params: TransportParams | None = None, **_route) -> AsyncioStream:
        local = (self.address, 0) if self.bind_outgoing else None
        reader, writer = await asyncio.open_connection(host, port, limit=self.limit, local_addr=local)
        s = AsyncioStream(reader, writer, params)
        if params is not None and not params.nagle_enabled:
            s.set_nodelay(True)
        return s

    async def start_server(self, port: int, handler, *, params_for=None, syn_hook: bool = False) -> AsyncioServer:
        async def on_conn(reader, writer):
            peer = writer.get_extra_info("peername")[0]
            params = params_for(peer) if params_for else None
            s = AsyncioStream(reader, writer, params)
            await handler(AsyncioIncoming(s, port))

        srv = await asyncio.start_server(on_conn, self.address, port, limit=self.limit, reuse_address=True)
        return AsyncioServer(srv)

    async def spawn_delay(self) -> None:
        await asyncio.sleep(self.fork_delay_ms / 1000.0)
