"""RTT bookkeeping, baseline relay choice and route-gain estimators."""

from __future__ import annotations

import asyncio
import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

DEFAULT_PROBES = 20
DEFAULT_INTERVAL_MS = 100.0


class UnreachableError(Exception):
    pass


@dataclass
class RttTable:
    """Symmetric table of minimum observed RTTs in ms."""

    entries: dict = field(default_factory=dict)
    probe_count: int = DEFAULT_PROBES
    probe_interval: float = DEFAULT_INTERVAL_MS

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def record(self, a: str, b: str, rtt: float) -> None:
        k = self._key(a, b)
        old = self.entries.get(k)
        if old is None or rtt < old:
            self.entries[k] = rtt

    def get(self, a: str, b: str) -> float:
        try:
            return self.entries[self._key(a, b)]
        except KeyError:
            raise KeyError(f"no RTT for {a} <-> {b}") from None

    __getitem__ = lambda self, ab: self.get(*ab)  # noqa: E731

    def __contains__(self, ab) -> bool:
        return self._key(*ab) in self.entries

    def hosts(self) -> set[str]:
        return {h for k in self.entries for h in k}

    def scaled(self, fn: Callable[[float], float]) -> "RttTable":
        return RttTable({k: fn(v) for k, v in self.entries.items()}, self.probe_count, self.probe_interval)

    # CSV: src,dst,rtt_ms
    @classmethod
    def from_csv(cls, text: str) -> "RttTable":
        t = cls()
        rows = csv.reader(io.StringIO(text))
        for row in rows:
            if not row or row[0].startswith("#") or row[0].strip() == "src":
                continue
            src, dst, rtt = (c.strip() for c in row[:3])
            t.record(src, dst, float(rtt))
        return t

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["src", "dst", "rtt_ms"])
        for (a, b), v in sorted(self.entries.items()):
            w.writerow([a, b, f"{v:g}"])
        return out.getvalue()


def measure_rtt(probe: Callable[[], float], n: int = DEFAULT_PROBES, interval: float = DEFAULT_INTERVAL_MS,
                sleep: Callable[[float], None] = time.sleep) -> float:
    """Minimum of n probe samples (ms), spaced `interval` ms apart. Failed probes are skipped."""
    if n < 1:
        raise ValueError("n must be >= 1")
    samples = []
    errors = []
    for i in range(n):
        if i and interval > 0:
            sleep(interval / 1000.0)
        try:
            samples.append(float(probe()))
        except Exception as exc:  # a lost probe is just a missing sample
            errors.append(exc)
    if not samples:
        raise UnreachableError(f"all {n} probes failed: {errors[-1]!r}")
    return min(samples)


async def ameasure_rtt(probe, n: int = DEFAULT_PROBES, interval: float = DEFAULT_INTERVAL_MS) -> float:
    """Async form of measure_rtt; `probe` is a coroutine function."""
    if n < 1:
        raise ValueError("n must be >= 1")
    samples = []
    last = None
    for i in range(n):
        if i and interval > 0:
            await asyncio.sleep(interval / 1000.0)
        try:
            samples.append(float(await probe()))
        except (OSError, ConnectionError, asyncio.TimeoutError) as exc:
            last = exc
    if not samples:
        raise UnreachableError(f"all {n} probes failed: {last!r}")
    return min(samples)


def plan_baseline(client: str, server: str, relays: Iterable[str], rtt: RttTable) -> tuple[str, str]:
    """(rc, rs): the relay with the lowest RTT to the client and the one with the lowest RTT to the server."""
    relays = sorted(set(relays))
    if not relays:
        raise ValueError("no relays to choose from")
    rc = min(relays, key=lambda r: (rtt.get(client, r), r))
    rs = min(relays, key=lambda r: (rtt.get(server, r), r))
    return rc, rs


def estimate_nosplit_gain(rtt_e2e: float, rtt_via_relays: float) -> float:
    """Predicted speed-up of routing (without splitting) through relays: the RTT ratio."""
    if rtt_e2e <= 0 or rtt_via_relays <= 0:
        raise ValueError("RTTs must be positive")
    return rtt_e2e / rtt_via_relays


def estimate_midrelay_gain(rtt_cs: float, rtt_cm: float, rtt_ms: float) -> float:
    """Predicted speed-up of adding a split relay between rc and rs: limited by the slower sub-leg."""
    if min(rtt_cs, rtt_cm, rtt_ms) <= 0:
        raise ValueError("RTTs must be positive")
    return rtt_cs / max(rtt_cm, rtt_ms)


def estimate_single_relay_split_gain(*_args) -> None:
    """No estimator: RTT ratios do not predict single-relay split performance well, so none is offered."""
    return None


def rank_mid_relays(rc: str, rs: str, candidates: Iterable[str], rtt: RttTable) -> list[tuple[str, float]]:
    base = rtt.get(rc, rs)
    scored = [(m, estimate_midrelay_gain(base, rtt.get(rc, m), rtt.get(m, rs))) for m in set(candidates)]
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored
