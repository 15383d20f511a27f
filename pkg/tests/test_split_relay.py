import asyncio
import hashlib
import ipaddress
import json

import pytest
from hypothesis import given, settings, strategies as st

from cloudsplit.apps import ContentServer, fetch, payload
from cloudsplit.core_model import ALL_FEATURE_SETS, BASELINE, LADDER, PIED_PIPER, TransportParams, three_leg_topology
from cloudsplit.netlab.network import Network
from cloudsplit.netlab.scenarios import simulate
from cloudsplit.pipe_timing import Scenario, Strategy
from cloudsplit.split_relay.config import RelayConfig, Route, parse_hostport
from cloudsplit.split_relay.preamble import MAGIC, ProtocolError, decode_preamble, encode_preamble, read_preamble
from cloudsplit.split_relay.relay import Relay
from cloudsplit.split_relay.workers import WorkerPool

# --- preamble -------------------------------------------------------------------------


def test_preamble_ipv4_vector():
    wire = encode_preamble("192.0.2.1", 8080)
    assert wire == bytes.fromhex("4f43443104c00002011f90")
    assert decode_preamble(wire) == (("192.0.2.1", 8080), 11)


def test_preamble_ipv6_vector():
    wire = encode_preamble("2001:db8::1", 443)
    assert len(wire) == 23
    assert wire == bytes.fromhex("4f43443106" "20010db8000000000000000000000001" "01bb")


def test_preamble_needs_more_bytes():
    wire = encode_preamble("10.1.2.3", 80)
    for k in range(len(wire)):
        assert decode_preamble(wire[:k]) is None


def test_preamble_rejects_bad_input():
    with pytest.raises(ProtocolError):
        decode_preamble(b"GET / HTTP/1.1\r\n")
    with pytest.raises(ProtocolError):
        decode_preamble(MAGIC + b"\x09" + bytes(6))
    with pytest.raises(ValueError):
        encode_preamble("example.com", 80)
    with pytest.raises(ValueError):
        encode_preamble("10.0.0.1", 70000)


class ChunkStream:
    def __init__(self, data: bytes, step: int):
        self.data, self.step = data, step

    async def read(self, n=-1):
        n = min(n if n > 0 else self.step, self.step)
        out, self.data = self.data[:n], self.data[n:]
        return out


def test_read_preamble_returns_leftover():
    wire = encode_preamble("10.0.0.9", 8080) + b"hello"
    dest, extra = asyncio.run(read_preamble(ChunkStream(wire, 3)))
    assert dest == ("10.0.0.9", 8080) and extra == b""  # reads never go past the header
    with pytest.raises(ProtocolError):
        asyncio.run(read_preamble(ChunkStream(wire[:7], 3)))


@settings(max_examples=200)
@given(addr=st.one_of(st.ip_addresses(v=4), st.ip_addresses(v=6)), port=st.integers(0, 65535),
       tail=st.binary(max_size=32))
def test_preamble_round_trip(addr, port, tail):
    wire = encode_preamble(str(addr), port)
    (host, p), used = decode_preamble(wire + tail)
    assert ipaddress.ip_address(host) == addr and p == port and used == len(wire)


# --- worker pool ----------------------------------------------------------------------

async def _noop():
    await asyncio.sleep(0)


def test_worker_pool_full_pool_spawns_nothing_extra():
    async def go():
        pool = WorkerPool(_noop, 8)
        await pool.start()
        ws = await asyncio.gather(*(pool.acquire() for _ in range(8)))
        return pool, ws

    pool, ws = asyncio.run(go())
    assert pool.spawned == 8 and pool.on_demand == 0 and len(set(ws)) == 8
    for w in ws:
        pool.release(w)
    assert pool.spawned == 8 and pool.stats()["idle"] == 8


def test_worker_pool_exhaustion_falls_back_to_on_demand():
    async def go():
        pool = WorkerPool(_noop, 2)
        await pool.start()
        ws = await asyncio.gather(*(pool.acquire() for _ in range(5)))
        for w in ws:
            pool.release(w)
        await asyncio.sleep(0)
        return pool

    pool = asyncio.run(go())
    assert pool.on_demand == 3 and pool.stats()["idle"] >= 2


def test_worker_pool_refills_to_low_watermark():
    async def go():
        pool = WorkerPool(_noop, 0, 3, 6)
        await pool.acquire()
        for _ in range(5):
            await asyncio.sleep(0)
        return pool

    pool = asyncio.run(go())
    assert pool.on_demand == 1 and pool.stats()["idle"] + pool.busy == 3


def test_worker_pool_high_watermark_retires():
    async def go():
        pool = WorkerPool(_noop, 0, 0, 4)
        ws = [await pool.acquire() for _ in range(10)]
        for w in ws:
            pool.release(w)
        return pool

    pool = asyncio.run(go())
    assert pool.stats()["idle"] == 4 and pool.retired == 6


def test_worker_pool_bad_watermarks():
    with pytest.raises(ValueError):
        WorkerPool(_noop, 0, 5, 2)


# --- config ---------------------------------------------------------------------------


def test_route_parse():
    r = Route.parse("8080=10.0.0.4:80@10.0.0.3:8080")
    assert r == Route(8080, ("10.0.0.4", 80), ("10.0.0.3", 8080))
    assert str(r) == "8080=10.0.0.4:80@10.0.0.3:8080"
    assert parse_hostport("[::1]:443") == ("::1", 443)
    with pytest.raises(ValueError):
        Route.parse("8080")


def test_config_violations():
    ok = RelayConfig(routes=(Route(8080, ("10.0.0.4", 80)),))
    assert ok.violations() == []
    assert any("watermark" in v for v in RelayConfig(pool_low_watermark=9, pool_high_watermark=2).violations())
    assert any("forward_buffer" in v for v in RelayConfig(forward_buffer=100).violations())
    unfriendly = RelayConfig(external_params=TransportParams(init_cwnd=100))
    assert any("friendly" in v for v in unfriendly.violations())
    assert RelayConfig(external_params=TransportParams(init_cwnd=100), friendly=False).violations() == []
    clash = RelayConfig(routes=(Route(7000, ("1.2.3.4", 80)),), features=PIED_PIPER)
    assert any("collides" in v for v in clash.violations())
    with pytest.raises(ValueError):
        clash.validate()


def test_params_for_peers():
    cfg = RelayConfig(peer_relays=("10.0.0.3",), features=PIED_PIPER)
    assert cfg.params_for("10.0.0.3").turbo_start
    assert not cfg.params_for("10.0.0.9").turbo_start
    plain = RelayConfig(peer_relays=("10.0.0.3",))
    assert not plain.params_for("10.0.0.3").turbo_start


# --- relay over netlab ----------------------------------------------------------------

TOPO = three_leg_topology()


@pytest.mark.parametrize("fs", LADDER, ids=lambda fs: fs.name)
@pytest.mark.parametrize("size", [1, 1460, 300_001])
def test_split_transfer_integrity(fs, size):
    run = simulate(Scenario(TOPO, Strategy.SPLIT, size, fs), seed=size)
    assert run.record.ok
    assert run.digest == hashlib.sha256(payload(size, size)).hexdigest()
    for relay in run.relays:
        assert all(p.conserved() for p in relay.pools.values())
        assert relay.friendliness_violations() == []


def test_all_feature_combinations_deliver():
    for fs in ALL_FEATURE_SETS:
        run = simulate(Scenario(TOPO, Strategy.SPLIT, 50_000, fs), seed=1)
        assert run.record.ok, fs.name


def test_abort_propagates_as_prefix():
    size, cut = 200_000, 77_777
    run = simulate(Scenario(TOPO, Strategy.SPLIT, size, PIED_PIPER), abort_at=cut, keep_data=True, seed=5)
    assert not run.record.ok and run.record.error
    assert len(run.data) <= cut
    assert run.data == payload(size, 5)[:len(run.data)]


def test_pool_is_used_and_refilled():
    run = simulate(Scenario(TOPO, Strategy.SPLIT, 10_000, PIED_PIPER))
    run.net.run_until_idle(run.net.loop.time() + 5.0)  # let the relays finish their teardown
    rc = run.relays[0]
    (pool,) = rc.pools.values()
    assert pool.claimed == 1 and pool.fallbacks == 0
    assert len(pool.idle) == pool.low
    assert rc.completed == 1


def test_lossy_links_still_deliver():
    t = three_leg_topology(external_loss=0.01, cloud_loss=0.001)
    for fs in (BASELINE, PIED_PIPER):
        run = simulate(Scenario(t, Strategy.SPLIT, 400_000, fs), seed=11)
        assert run.record.ok and run.digest == hashlib.sha256(payload(400_000, 11)).hexdigest()


def test_status_endpoint_and_dead_destination():
    net = Network(TOPO)

    async def main():
        cfg = RelayConfig(net.address("rc"), (Route(8080, (net.address("server"), 81)),), status_port=9000, name="rc")
        relay = Relay(net.host("rc"), cfg)
        await relay.start()
        client = net.host("client")
        res = await fetch(client, net.address("rc"), 8080, 1000)  # nothing listens on server:81
        s = await client.open_connection(net.address("rc"), 9000)
        body = b""
        while True:
            chunk = await s.read(65536)
            if not chunk:
                break
            body += chunk
        return res, relay, json.loads(body)

    res, relay, status = net.loop.run_until_complete(main())
    assert not res.record.ok
    assert relay.failed == 1
    assert status["name"] == "rc" and status["failed"] == 1
    assert status["params"]["external"]["init_cwnd"] == 10


def test_content_server_serves_exact_bytes():
    net = Network(TOPO)
    srv = ContentServer(seed=3)

    async def main():
        await net.host("server").start_server(80, srv.handle)
        return await fetch(net.host("client"), net.address("server"), 80, 5000, direct=True, keep_data=True)

    res = net.loop.run_until_complete(main())
    assert res.data == payload(5000, 3) and srv.served == 1
