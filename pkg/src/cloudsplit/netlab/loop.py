"""Deterministic virtual-time event loop.

SimLoop is a drop-in asyncio loop: coroutines written against asyncio (sleep, Event,
Queue, gather, wait_for) run unchanged, but time only advances when every ready
callback has run, jumping straight to the next scheduled event. Events are ordered by
(time, sequence number), so identical inputs give identical traces.

Time is in seconds, like asyncio; ``now_us`` exposes microseconds.
"""

from __future__ import annotations

import asyncio
import collections
import heapq
import itertools
import logging
from asyncio import events

log = logging.getLogger(__name__)


class TimeLimitExceeded(Exception):
    pass


class SimLoop(asyncio.AbstractEventLoop):
    def __init__(self):
        self._now = 0.0
        self._seq = itertools.count()
        self._timers: list = []
        self._ready: collections.deque = collections.deque()
        self._running = False
        self._stopping = False
        self._closed = False
        self._exc_handler = None
        self.errors: list[dict] = []
        self.events_processed = 0

    # clock
    def time(self) -> float:
        return self._now

    @property
    def now_us(self) -> float:
        return self._now * 1e6

    # scheduling
    def call_soon(self, callback, *args, context=None):
        h = asyncio.Handle(callback, args, self, context)
        self._ready.append(h)
        return h

    call_soon_threadsafe = call_soon

    def call_later(self, delay, callback, *args, context=None):
        return self.call_at(self._now + max(delay, 0.0), callback, *args, context=context)

    def call_at(self, when, callback, *args, context=None):
        h = asyncio.TimerHandle(when, callback, args, self, context)
        heapq.heappush(self._timers, (when, next(self._seq), h, None, None))
        h._scheduled = True
        return h

    def schedule(self, when: float, fn, *args) -> None:
        """Cheap uncancellable timer for packet events."""
        heapq.heappush(self._timers, (when, next(self._seq), None, fn, args))

    def _timer_handle_cancelled(self, handle):
        pass  # lazily skipped when popped

    def create_future(self):
        return asyncio.Future(loop=self)

    def create_task(self, coro, *, name=None):
        return asyncio.Task(coro, loop=self, name=name)

    # running
    def _step(self) -> bool:
        if self._ready:
            for _ in range(len(self._ready)):
                h = self._ready.popleft()
                if not h._cancelled:
                    h._run()
            return True
        while self._timers:
            when, _, h, fn, args = heapq.heappop(self._timers)
            if h is not None and h._cancelled:
                continue
            if when > self._now:
                self._now = when
            self.events_processed += 1
            if h is not None:
                h._scheduled = False
                h._run()
            else:
                fn(*args)
            return True
        return False

    def next_event_time(self) -> float | None:
        if self._ready:
            return self._now
        while self._timers and self._timers[0][2] is not None and self._timers[0][2]._cancelled:
            heapq.heappop(self._timers)
        return self._timers[0][0] if self._timers else None

    def _enter(self):
        if self._running:
            raise RuntimeError("SimLoop is already running")
        self._running = True
        self._old_loop = events._get_running_loop()
        events._set_running_loop(self)

    def _leave(self):
        self._running = False
        self._stopping = False
        events._set_running_loop(self._old_loop)

    def run_until_idle(self, time_limit: float | None = None) -> bool:
        """Process events until none remain. Returns False if time_limit cut the run short."""
        self._enter()
        try:
            while not self._stopping:
                nxt = self.next_event_time()
                if nxt is None:
                    return True
                if time_limit is not None and nxt > time_limit:
                    self._now = max(self._now, time_limit)
                    return False
                self._step()
            return True
        finally:
            self._leave()

    def run_forever(self):
        self.run_until_idle()

    def run_until_complete(self, future, time_limit: float | None = None):
        fut = asyncio.ensure_future(future, loop=self)
        self._enter()
        try:
            while not fut.done():
                nxt = self.next_event_time()
                if nxt is None:
                    raise RuntimeError("event queue drained before the awaited task finished (deadlock)")
                if time_limit is not None and nxt > time_limit:
                    self._now = max(self._now, time_limit)
                    raise TimeLimitExceeded(f"virtual time limit {time_limit}s exceeded")
                self._step()
        finally:
            self._leave()
        return fut.result()

    def stop(self):
        self._stopping = True

    def is_running(self):
        return self._running

    def is_closed(self):
        return self._closed

    def close(self):
        self._closed = True
        self._ready.clear()
        self._timers.clear()

    async def shutdown_asyncgens(self):
        pass

    async def shutdown_default_executor(self):
        pass

    def get_debug(self):
        return False

    def set_debug(self, enabled):
        pass

    # errors
    def set_exception_handler(self, handler):
        self._exc_handler = handler

    def get_exception_handler(self):
        return self._exc_handler

    def default_exception_handler(self, context):
        self.errors.append(context)
        exc = context.get("exception")
        log.debug("unhandled in SimLoop: %s %r", context.get("message"), exc)

    def call_exception_handler(self, context):
        if self._exc_handler is not None:
            self._exc_handler(self, context)
        else:
            self.default_exception_handler(context)
