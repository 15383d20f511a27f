"""Smoke tests over real loopback sockets. Timing checks are loose: the host scheduler adds noise."""
import asyncio
import hashlib

import pytest

from cloudsplit.apps import ContentServer, fetch, payload
from cloudsplit.core_model import BASELINE, PIED_PIPER, three_leg_topology
from cloudsplit.pipe_timing import Scenario, Strategy, timing
from cloudsplit.split_relay.config import RelayConfig, Route
from cloudsplit.split_relay.loopback import real_transfer
from cloudsplit.split_relay.relay import Relay
from cloudsplit.split_relay.sockets import AsyncioNetwork

TOPO = three_leg_topology()


@pytest.mark.parametrize("strategy,fs,port", [(Strategy.E2E, BASELINE, 18100), (Strategy.SPLIT, PIED_PIPER, 18200)])
def test_loopback_transfer_tracks_model(strategy, fs, port):
    s = Scenario(TOPO, strategy, 20_000, fs)
    rec = asyncio.run(real_transfer(s, server_port=port, proxy_port=port + 1, pool_port=port + 2))
    assert rec.ok and rec.bytes_transferred == 20_000
    expect = timing(s).ttfb
    assert expect - 5 <= rec.ttfb <= expect + 150


def test_relay_chain_on_real_sockets_is_byte_exact():
    size = 3_000_000
    ips = {"rc": "127.0.0.31", "rs": "127.0.0.32", "server": "127.0.0.33", "client": "127.0.0.34"}

    async def main():
        content = ContentServer(seed=9)
        server = await AsyncioNetwork(ips["server"]).start_server(18300, content.handle)
        rs = Relay(AsyncioNetwork(ips["rs"]), RelayConfig(ips["rs"], (Route(18301, (ips["server"], 18300)),),
                                                          (ips["rc"],), pool_port=18302, features=PIED_PIPER, name="rs"))
        rc = Relay(AsyncioNetwork(ips["rc"]),
                   RelayConfig(ips["rc"], (Route(18301, (ips["server"], 18300), (ips["rs"], 18301)),), (ips["rs"],),
                               pool_port=18302, features=PIED_PIPER, name="rc"))
        for r in (rs, rc):
            await r.listen()
        for r in (rs, rc):
            await r.fill_pools()
        try:
            res = await fetch(AsyncioNetwork(ips["client"]), ips["rc"], 18301, size)
            return res, rc.status(), content.served
        finally:
            for r in (rc, rs):
                await r.close()
            server.close()
            await server.wait_closed()

    res, status, served = asyncio.run(main())
    assert res.record.ok
    assert res.digest == hashlib.sha256(payload(size, 9)).hexdigest()
    assert served == 1 and status["failed"] == 0
