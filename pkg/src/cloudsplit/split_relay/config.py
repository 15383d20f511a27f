"""Relay configuration: listening ports, routing rules, peers, pools and per-leg parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..core_model import BASELINE, SYSTEM_DEFAULTS, FeatureSet, TransportParams

MIN_FORWARD_BUFFER = 4096


def parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {text!r}")
    return host.strip("[]"), int(port)


@dataclass(frozen=True)
class Route:
    """Connections arriving on listen_port go to dest, through next_hop when given.

    next_hop is another relay's proxy port. When connection pooling is on and the
    next hop is a declared peer, a pooled connection to that peer carries a preamble
    naming dest instead.
    """

    listen_port: int
    dest: tuple[str, int]
    next_hop: tuple[str, int] | None = None

    @classmethod
    def parse(cls, text: str) -> "Route":
        """``<port>=<dest host:port>[@<next hop host:port>]``"""
        port, sep, rest = text.partition("=")
        if not sep:
            raise ValueError(f"route must look like PORT=HOST:PORT[@HOST:PORT], got {text!r}")
        dest, at, hop = rest.partition("@")
        return cls(int(port), parse_hostport(dest), parse_hostport(hop) if at else None)

    def __str__(self):
        s = f"{self.listen_port}={self.dest[0]}:{self.dest[1]}"
        return s + (f"@{self.next_hop[0]}:{self.next_hop[1]}" if self.next_hop else "")


@dataclass(frozen=True)
class RelayConfig:
    listen_address: str = "127.0.0.1"
    routes: tuple[Route, ...] = ()
    peer_relays: tuple[str, ...] = ()
    pool_port: int = 7000
    pool_low_watermark: int = 4
    pool_high_watermark: int = 8
    worker_pool_size: int = 8
    forward_buffer: int = 16384
    features: FeatureSet = BASELINE
    intra_cloud_params: TransportParams = field(default_factory=TransportParams.turbo)
    external_params: TransportParams = SYSTEM_DEFAULTS
    plain_cloud_params: TransportParams | None = None  # relay-to-relay legs without Turbo-Start
    friendly: bool = True
    status_port: int | None = None
    name: str = "relay"

    def violations(self) -> list[str]:
        out = []
        if self.pool_low_watermark > self.pool_high_watermark:
            out.append(f"pool_low_watermark {self.pool_low_watermark} > pool_high_watermark {self.pool_high_watermark}")
        if self.pool_low_watermark < 0 or self.worker_pool_size < 0:
            out.append("pool sizes must be non-negative")
        if self.forward_buffer < MIN_FORWARD_BUFFER:
            out.append(f"forward_buffer {self.forward_buffer} < {MIN_FORWARD_BUFFER}")
        if self.friendly and self.external_params.congestion_knobs() != SYSTEM_DEFAULTS.congestion_knobs():
            out.append("external_params differ from system defaults on a relay advertised as friendly")
        ports = [r.listen_port for r in self.routes]
        if len(set(ports)) != len(ports):
            out.append("duplicate route listen ports")
        if self.features.connection_pool and self.pool_port in ports:
            out.append(f"pool_port {self.pool_port} collides with a route port")
        for p in self.params_in_use():
            out.extend(p.violations())
        return out

    def validate(self) -> "RelayConfig":
        v = self.violations()
        if v:
            raise ValueError("; ".join(v))
        return self

    def params_in_use(self) -> list[TransportParams]:
        return [self.external_params, self.cloud_params]

    @property
    def cloud_params(self) -> TransportParams:
        """Parameters for relay-to-relay legs: Turbo-Start ones only when that feature is on."""
        if self.features.turbo_start:
            return self.intra_cloud_params
        return self.plain_cloud_params or self.external_params

    def is_peer(self, host: str) -> bool:
        return host in self.peer_relays

    def params_for(self, host: str) -> TransportParams:
        return self.cloud_params if self.is_peer(host) else self.external_params
