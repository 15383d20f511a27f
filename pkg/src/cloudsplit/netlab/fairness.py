"""Two flows into one client over a shared drop-tail bottleneck.

The short flow comes from a content host sitting next to rc. The long flow comes from
the far server, either as one TCP connection routed through rs and rc, or split by
relays at rs and rc. The shared bottleneck is the rc -> client link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..apps import ContentServer, fetch
from ..core_model import PIED_PIPER, FeatureSet, FlowRecord, Host, Link, Role, Topology, TransportParams, Zone
from .network import Network
from .scenarios import PROXY_PORT, SERVER_PORT, deploy_chain


def fairness_topology(rtt_client: float = 32.7, rtt_cloud: float = 215.0, rtt_server: float = 26.0,
                      bottleneck_bw: float = 1.25e6, bottleneck_queue: int | None = None,
                      fast_bw: float = 125e6) -> Topology:
    hosts = [
        Host("client", Role.CLIENT, Zone.INTERNET),
        Host("rc", Role.RELAY, Zone.CLOUD),
        Host("rs", Role.RELAY, Zone.CLOUD),
        Host("server", Role.SERVER, Zone.INTERNET),
        Host("near", Role.SERVER, Zone.INTERNET),
    ]
    links = [
        Link("client", "rc", rtt_client / 2, bottleneck_bw, queue_capacity=bottleneck_queue),
        Link("rc", "rs", rtt_cloud / 2, fast_bw),
        Link("rs", "server", rtt_server / 2, fast_bw, queue_capacity=100_000),
        Link("near", "rc", 0.01, fast_bw, queue_capacity=100_000),
    ]
    return Topology(hosts, links, pairs=[("client", "server"), ("client", "near")])


@dataclass
class FairnessResult:
    long: FlowRecord
    short: FlowRecord
    long_share: float
    short_share: float
    windows: int


def overlap_shares(a: FlowRecord, b: FlowRecord, window_s: float = 1.0) -> tuple[float, float, int]:
    """Mean per-window share of each flow over the windows where both were active the whole window."""
    if not a.throughput_series or not b.throughput_series:
        return math.nan, math.nan, 0
    ta = dict(a.throughput_series)
    tb = dict(b.throughput_series)
    # series are keyed by window start relative to each flow's own start; both flows start together
    last = min(max(ta), max(tb)) - window_s  # drop each flow's final, partial window
    keys = sorted(k for k in ta.keys() & tb.keys() if k <= last)
    shares_a = []
    for k in keys:
        tot = ta[k] + tb[k]
        if tot > 0:
            shares_a.append(ta[k] / tot)
    if not shares_a:
        return math.nan, math.nan, 0
    sa = sum(shares_a) / len(shares_a)
    return sa, 1.0 - sa, len(shares_a)


def run_fairness(topology: Topology | None = None, *, split: bool = False, features: FeatureSet = PIED_PIPER,
                 size: int = 20_000_000, short_size: int | None = None, same_rtt: bool = False, seed: int = 0,
                 window_s: float = 1.0, params: TransportParams | None = None, trace: bool = False) -> FairnessResult:
    """Start both flows at t=0 and report their mean bottleneck shares during the overlap.

    same_rtt=True replaces the long flow by a second copy of the short one (symmetry check).
    """
    topo = topology or fairness_topology()
    net = Network(topo, seed=seed, trace=trace)
    params = params or TransportParams()
    short_size = short_size or size
    servers = {h: ContentServer(seed=seed + i) for i, h in enumerate(("server", "near"))}

    async def main():
        import asyncio

        for h, srv in servers.items():
            await net.host(h).start_server(SERVER_PORT, srv.handle, params_for=lambda _a: params)
        client = net.host("client")
        near = (net.address("near"), SERVER_PORT)
        if same_rtt:
            long_target, kw = near, {}
        elif split:
            await deploy_chain(net, ["rc", "rs"], (net.address("server"), SERVER_PORT), features,
                               external=params, cloud=params)
            long_target, kw = (net.address("rc"), PROXY_PORT), {}
        else:
            long_target, kw = (net.address("server"), SERVER_PORT), {"via": (net.address("rc"), net.address("rs"))}
        t0 = net.loop.time()
        await asyncio.sleep(max(0.0, math.ceil(t0) - t0))  # align both flows to a whole second
        return await asyncio.gather(
            fetch(client, long_target[0], long_target[1], size, params=params, flow_id="long", window_s=window_s, **kw),
            fetch(client, near[0], near[1], short_size, params=params, flow_id="short", window_s=window_s),
        )

    long_res, short_res = net.loop.run_until_complete(main())
    sl, ss, n = overlap_shares(long_res.record, short_res.record, window_s)
    return FairnessResult(long_res.record, short_res.record, sl, ss, n)
