"""Ready-made lab runs: one transfer under a given strategy, with real relay engines in the loop."""

from __future__ import annotations

from dataclasses import dataclass

from ..apps import ContentServer, fetch
from ..core_model import FeatureSet, FlowRecord, Topology, TransportParams
from ..pipe_timing import CLIENT_LEG, CLOUD_LEG, E2E_LEG, SERVER_LEG, Scenario, Strategy
from ..split_relay.config import RelayConfig, Route
from ..split_relay.relay import Relay
from .network import Network

SERVER_PORT = 80
PROXY_PORT = 8080
POOL_PORT = 7000


@dataclass
class LabRun:
    record: FlowRecord
    digest: str
    net: Network
    relays: list
    data: bytes | None = None  # delivered bytes, when kept


async def deploy_chain(net: Network, relays, dest: tuple[str, int], features, *, external=None, edge_params=None,
                       cloud=None, turbo=None, pool_low: int = 4, pool_high: int = 8, workers: int = 8,
                       forward_buffer: int = 16384) -> list[Relay]:
    """Start relays so that relays[0]:PROXY_PORT forwards to dest through the rest of the chain.

    edge_params maps a relay id to the params of its Internet-facing leg (defaults to `external`).
    Every relay listens before any of them fills its connection pools.
    """
    edge_params = edge_params or {}
    addrs = [net.address(r) for r in relays]
    out = []
    for i in range(len(relays)):
        hop = (addrs[i + 1], PROXY_PORT) if i + 1 < len(relays) else None
        peers = tuple(addrs[j] for j in (i - 1, i + 1) if 0 <= j < len(relays))
        ext = edge_params.get(relays[i], external)
        kw = {"external_params": ext} if ext is not None else {}
        if turbo is not None:
            kw["intra_cloud_params"] = turbo
        cfg = RelayConfig(
            listen_address=addrs[i],
            routes=(Route(PROXY_PORT, dest, hop),),
            peer_relays=peers,
            pool_port=POOL_PORT,
            pool_low_watermark=pool_low,
            pool_high_watermark=max(pool_low, pool_high),
            worker_pool_size=workers,
            forward_buffer=forward_buffer,
            features=features,
            plain_cloud_params=cloud,
            friendly=False,
            name=relays[i],
            **kw,
        )
        relay = Relay(net.host(relays[i]), cfg)
        await relay.listen()
        out.append(relay)
    for relay in out:
        await relay.fill_pools()
    return out


def simulate(s: Scenario, *, seed: int = 0, trace: bool = False, abort_at: int = -1, fork_jitter_ms: float = 0.0,
             time_limit: float | None = None, keep_data: bool = False) -> LabRun:
    """Run the scenario's transfer once in netlab and return the measured FlowRecord."""
    if s.strategy == Strategy.IDEAL:
        raise ValueError("the ideal pipe has no protocol to emulate")
    net = Network(s.topology, seed=seed, trace=trace, fork_delay_ms=s.fork_delay, fork_jitter_ms=fork_jitter_ms)
    c, srv = s.endpoints
    split = s.strategy == Strategy.SPLIT
    if split:
        client_p, server_p = s.leg_params(CLIENT_LEG), s.leg_params(SERVER_LEG)
    else:
        client_p = server_p = s.leg_params(E2E_LEG)
    content = ContentServer(seed=seed)
    relays = []

    async def main():
        await net.host(srv).start_server(SERVER_PORT, content.handle, params_for=lambda _a: server_p)
        dest = (net.address(srv), SERVER_PORT)
        client = net.host(c)
        if split:
            rc, rs = s.relay_pair
            relays.extend(await deploy_chain(
                net, [rc, rs], dest, s.features,
                edge_params={rc: client_p, rs: server_p},
                cloud=s.params_per_leg.get(CLOUD_LEG, server_p), turbo=s.turbo_params,
            ))
            target, kw = (net.address(rc), PROXY_PORT), {}
        elif s.strategy == Strategy.NOSPLIT_RELAY:
            target, kw = dest, {"via": tuple(net.address(r) for r in s.relay_pair)}
        else:
            target, kw = dest, {"direct": True}
        return await fetch(client, target[0], target[1], s.file_size, params=client_p, abort_at=abort_at,
                           flow_id=s.strategy.value, keep_data=keep_data, **kw)

    res = net.loop.run_until_complete(main(), time_limit=time_limit)
    return LabRun(res.record, res.digest, net, relays, res.data)


def simulate_chain(topology: Topology, client: str, server: str, chain, size: int, features: FeatureSet, *,
                   params: TransportParams | None = None, turbo: TransportParams | None = None, seed: int = 0,
                   fork_delay_ms: float = 0.012) -> LabRun:
    """Split transfer through any number of chained relays (chain[0] faces the client)."""
    net = Network(topology, seed=seed, fork_delay_ms=fork_delay_ms)
    params = params or TransportParams()
    content = ContentServer(seed=seed)
    relays = []

    async def main():
        await net.host(server).start_server(SERVER_PORT, content.handle, params_for=lambda _a: params)
        dest = (net.address(server), SERVER_PORT)
        relays.extend(await deploy_chain(net, list(chain), dest, features, external=params, cloud=params, turbo=turbo))
        return await fetch(net.host(client), net.address(chain[0]), PROXY_PORT, size, params=params,
                           flow_id="chain")

    res = net.loop.run_until_complete(main())
    return LabRun(res.record, res.digest, net, relays)
