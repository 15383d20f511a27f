"""Minimal request/response pair used to drive transfers over any stream backend.

Request line: ``GET <size> <abort_at>\\n``. The server answers with `size` pseudorandom
bytes derived from its seed; abort_at >= 0 makes it reset the connection after that
many bytes.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
import random
from dataclasses import dataclass

from .core_model import FlowRecord, TransportParams

log = logging.getLogger(__name__)

CHUNK = 64 * 1024


def payload(size: int, seed: int = 0) -> bytes:
    return random.Random(seed).randbytes(size)


def encode_request(size: int, abort_at: int = -1) -> bytes:
    return f"GET {size} {abort_at}\n".encode()


def decode_request(line: bytes) -> tuple[int, int]:
    verb, size, abort_at = line.decode().split()
    if verb != "GET":
        raise ValueError(f"bad request {line!r}")
    return int(size), int(abort_at)


async def _readline(stream, limit: int = 256) -> bytes:
    buf = bytearray()
    while not buf.endswith(b"\n"):
        if len(buf) >= limit:
            raise ValueError("request line too long")
        chunk = await stream.read(1)
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


class ContentServer:
    """Serves `GET <size>` requests; caches generated bodies by size."""

    def __init__(self, seed: int = 0, nodelay: bool = True):
        self.seed = seed
        self.nodelay = nodelay
        self.served = 0
        self._cache: dict[int, bytes] = {}

    def body(self, size: int) -> bytes:
        b = self._cache.get(size)
        if b is None:
            b = self._cache[size] = payload(size, self.seed)
        return b

    async def handle(self, incoming):
        stream = await incoming.accept()
        if self.nodelay:
            stream.set_nodelay(True)
        try:
            size, abort_at = decode_request(await _readline(stream))
            body = self.body(size)
            limit = size if abort_at < 0 else min(abort_at, size)
            for off in range(0, limit, CHUNK):
                stream.write(body[off:min(off + CHUNK, limit)])
                await stream.drain()
            if abort_at >= 0:
                stream.abort()
                return
            self.served += 1
            stream.write_eof()
            while await stream.read(CHUNK):
                pass
            stream.close()
        except (ConnectionError, ValueError, asyncio.IncompleteReadError) as exc:
            log.debug("content server: %r", exc)
            stream.abort()


@dataclass
class FetchResult:
    record: FlowRecord
    digest: str
    data: bytes | None = None


async def fetch(net, host: str, port: int, size: int, *, params: TransportParams | None = None,
                abort_at: int = -1, flow_id: str = "flow", via=(), direct: bool = False,
                keep_data: bool = False, window_s: float = 1.0) -> FetchResult:
    """Request `size` bytes and time the response. TTFB counts from the connect call."""
    start = net.time()
    arrivals = []
    h = hashlib.sha256()
    kept = bytearray() if keep_data else None
    error = None
    stream = None
    try:
        kw = {"via": via, "direct": direct} if (via or direct) else {}
        stream = await net.open_connection(host, port, params, **kw)
        stream.set_nodelay(True)
        stream.write(encode_request(size, abort_at))
        await stream.drain()
        got = 0
        while got < size:
            chunk = await stream.read(CHUNK)
            if not chunk:
                break
            arrivals.append((net.time(), len(chunk)))
            h.update(chunk)
            if kept is not None:
                kept += chunk
            got += len(chunk)
        if got < size:
            error = "eof"
        stream.write_eof()
        stream.close()
    except (ConnectionError, OSError, asyncio.TimeoutError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        if stream is not None:
            stream.abort()
    rec = FlowRecord.from_arrivals(flow_id, size, start, arrivals, window_s, error)
    return FetchResult(rec, h.hexdigest(), bytes(kept) if kept is not None else None)
