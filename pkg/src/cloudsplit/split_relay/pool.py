"""Kept-alive idle connections to one peer relay, claimed at request time."""

from __future__ import annotations

import asyncio
import logging

log = logging.getLogger(__name__)


class PeerUnreachable(ConnectionError):
    def __init__(self, peer: str, reason: str = ""):
        super().__init__(f"peer relay {peer} unreachable" + (f": {reason}" if reason else ""))
        self.peer = peer


class ConnectionPool:
    """Idle connections to `peer:port`.

    Accounting: every successfully opened connection is exactly one of idle, claimed
    or discarded (found dead while idle), and `dialing` counts dials not yet finished,
    so claimed + idle + discarded == opened at all times.
    """

    def __init__(self, net, peer: str, port: int, params, low: int, high: int):
        self.net = net
        self.peer = peer
        self.port = port
        self.params = params
        self.low = low
        self.high = high
        self.idle: list = []
        self.dialing = 0
        self.opened = 0
        self.claimed = 0
        self.discarded = 0
        self.failed = 0
        self.fallbacks = 0
        self._refiller: asyncio.Task | None = None
        self._closed = False

    async def _dial(self):
        self.dialing += 1
        try:
            s = await self.net.open_connection(self.peer, self.port, self.params)
        except (OSError, ConnectionError) as exc:
            self.failed += 1
            raise PeerUnreachable(self.peer, str(exc)) from exc
        finally:
            self.dialing -= 1
        s.set_nodelay(True)
        s.set_keepalive(True)
        self.opened += 1
        return s

    async def start(self) -> None:
        results = await asyncio.gather(*(self._dial() for _ in range(self.low)), return_exceptions=True)
        for r in results:
            if isinstance(r, BaseException):
                for s in results:
                    if not isinstance(s, BaseException):
                        s.abort()
                raise r if isinstance(r, PeerUnreachable) else PeerUnreachable(self.peer, repr(r))
            self.idle.append(r)

    def claim(self):
        """An idle connection, or None when the pool is empty."""
        while self.idle:
            s = self.idle.pop(0)
            if getattr(s, "closed", False):
                self.discarded += 1
                continue
            self.claimed += 1
            self._kick_refill()
            return s
        self._kick_refill()
        return None

    async def fresh(self):
        """A newly dialed connection for when the pool ran dry; counted as claimed."""
        self.fallbacks += 1
        s = await self._dial()
        self.claimed += 1
        return s

    def _kick_refill(self) -> None:
        if self._closed or len(self.idle) + self.dialing >= self.low:
            return
        if self._refiller is None or self._refiller.done():
            self._refiller = asyncio.get_running_loop().create_task(self._refill())

    async def _refill(self) -> None:
        while not self._closed and len(self.idle) + self.dialing < self.low:
            try:
                s = await self._dial()
            except PeerUnreachable as exc:
                log.warning("pool refill: %s", exc)
                return
            if self._closed or len(self.idle) >= self.high:
                s.close()
                self.discarded += 1
            else:
                self.idle.append(s)

    def close(self) -> None:
        self._closed = True
        if self._refiller is not None:
            self._refiller.cancel()
        for s in self.idle:
            s.close()
        self.discarded += len(self.idle)
        self.idle.clear()

    def conserved(self) -> bool:
        return self.claimed + len(self.idle) + self.discarded == self.opened

    def stats(self) -> dict:
        return {
            "peer": f"{self.peer}:{self.port}",
            "idle": len(self.idle),
            "dialing": self.dialing,
            "claimed": self.claimed,
            "discarded": self.discarded,
            "opened": self.opened,
            "fallbacks": self.fallbacks,
            "failed": self.failed,
        }
