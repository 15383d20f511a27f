"""Pre-spawned execution contexts for pump tasks.

A context costs one `spawn()` (a fork-like delay supplied by the host network) to
create. With a pool, acquire() hands out an idle one immediately; an empty pool falls
back to an on-demand spawn. Contexts go back to the pool on release(), and release()
above the high watermark retires the context. A background refiller keeps idle + busy
at or above the low watermark, so contexts that are merely out on loan are not replaced.
A pool of size 0 with both watermarks 0 degrades to spawning per request.
"""

from __future__ import annotations

import asyncio
import itertools
import logging

log = logging.getLogger(__name__)


class Worker:
    _ids = itertools.count(1)

    def __init__(self):
        self.id = next(self._ids)

    def __repr__(self):
        return f"Worker#{self.id}"


class WorkerPool:
    def __init__(self, spawn, size: int = 0, low: int | None = None, high: int | None = None):
        self._spawn_fn = spawn
        self.size = size
        self.low = size if low is None else low
        self.high = max(size, self.low) if high is None else high
        if self.low > self.high:
            raise ValueError(f"low watermark {self.low} > high watermark {self.high}")
        self.idle: list[Worker] = []
        self.spawned = 0
        self.on_demand = 0
        self.retired = 0
        self.acquired = 0
        self.busy = 0
        self._refiller: asyncio.Task | None = None
        self._closed = False

    async def _spawn(self) -> Worker:
        await self._spawn_fn()
        self.spawned += 1
        return Worker()

    async def start(self) -> None:
        for _ in range(self.size):
            self.idle.append(await self._spawn())

    async def acquire(self) -> Worker:
        self.acquired += 1
        if self.idle:
            w = self.idle.pop()
        else:
            self.on_demand += 1
            w = await self._spawn()
        self.busy += 1
        self._kick_refill()
        return w

    def release(self, w: Worker) -> None:
        self.busy -= 1
        if self._closed or len(self.idle) >= self.high:
            self.retired += 1
            return
        self.idle.append(w)

    def _kick_refill(self) -> None:
        if self._closed or len(self.idle) + self.busy >= self.low:
            return
        if self._refiller is None or self._refiller.done():
            self._refiller = asyncio.get_running_loop().create_task(self._refill())

    async def _refill(self) -> None:
        while not self._closed and len(self.idle) + self.busy < self.low:
            self.idle.append(await self._spawn())

    def close(self) -> None:
        self._closed = True
        if self._refiller is not None:
            self._refiller.cancel()
        self.retired += len(self.idle)
        self.idle.clear()

    def stats(self) -> dict:
        return {
            "idle": len(self.idle),
            "busy": self.busy,
            "spawned": self.spawned,
            "on_demand": self.on_demand,
            "retired": self.retired,
            "low_watermark": self.low,
            "high_watermark": self.high,
        }
