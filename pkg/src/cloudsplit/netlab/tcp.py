"""Simplified TCP: three-way handshake, slow start, AIMD with NewReno-style recovery, RTO.

Deliberate simplifications: no SACK, no delayed ACKs (every data segment is ACKed),
no CUBIC curve, sequence numbers start at 0 and the SYN consumes none. Slow start adds
one segment per ACK, so a lossless window doubles every round trip.
"""

from __future__ import annotations

import asyncio
import enum
import math

from ..core_model import TransportParams
from .network import ACK, FIN, PROBE, RST, SYN, Network, Packet

MIN_RTO = 0.2
INIT_RTO = 1.0
MAX_RTO = 60.0
SYN_RETRIES = 5


class State(enum.Enum):
    CLOSED = "closed"
    SYN_SENT = "syn_sent"
    SYN_RECEIVED = "syn_received"
    ESTABLISHED = "established"
    FIN_WAIT = "fin_wait"


class Phase(enum.Enum):
    SLOW_START = "slow_start"
    CONGESTION_AVOIDANCE = "congestion_avoidance"


class TcpConnection:
    def __init__(self, stack: "TcpStack", lport: int, raddr: str, rport: int, params: TransportParams, route, back_route):
        self.stack = stack
        self.net: Network = stack.net
        self.loop = stack.net.loop
        self.host = stack.host_id
        self.lport = lport
        self.raddr = raddr
        self.rport = rport
        self.params = params
        self.mss = params.mss
        self.route = route
        self.back_route = back_route
        self.state = State.CLOSED
        self.nodelay = not params.nagle_enabled
        self.keepalive = False
        # sender
        self.snd_una = 0
        self.snd_nxt = 0
        self.snd_max = 0
        self.sndbuf = bytearray()
        self.sndbuf_base = 0
        self.cwnd = float(params.init_cwnd)
        self.ssthresh = math.inf
        self.peer_wnd = params.mss
        self.dupacks = 0
        self.in_recovery = False
        self._partial_acks = 0
        self.recover = 0
        self.small_sent_seq = -1  # end seq of last sub-MSS segment, for Nagle
        self.eof_requested = False
        self.fin_sent = False
        self.fin_acked = False
        self.srtt = None
        self.rttvar = 0.0
        self.rto = INIT_RTO
        self._rto_gen = 0
        self._rto_armed = False
        self._persist_armed = False
        self._syn_tries = 0
        # receiver
        self.rcv_nxt = 0
        self.rcvbuf = bytearray()
        self.ooo: dict[int, bytes] = {}
        self.peer_fin_seq = None
        self.eof = False
        self.reset = False
        self.last_adv = 0
        self.bytes_received = 0
        # app-facing
        self._read_waiter: asyncio.Future | None = None
        self._drain_waiters: list[asyncio.Future] = []
        self.established = self.loop.create_future()
        self.cwnd_log: list[tuple[float, float]] = []

    # --- helpers -----------------------------------------------------------------
    @property
    def flow(self) -> str:
        return f"{self.host}:{self.lport}>{self.raddr}:{self.rport}"

    @property
    def phase(self) -> Phase:
        return Phase.SLOW_START if self.cwnd < self.ssthresh else Phase.CONGESTION_AVOIDANCE

    @property
    def in_flight(self) -> int:
        return self.snd_nxt - self.snd_una

    def _adv_window(self) -> int:
        return max(0, min(self.params.rwnd, self.params.recv_buffer) - len(self.rcvbuf))

    def _packet(self, flags, seq=0, data=b"", ts_echo=0.0, back=False):
        wnd = self._adv_window()
        self.last_adv = wnd
        return Packet(self.host, self.lport, self.raddr, self.rport, flags, seq, self.rcv_nxt, data, wnd,
                      self.loop._now, ts_echo, self.route)

    def _emit(self, pkt):
        self.net.send(pkt)

    def _set_state(self, st: State):
        self.state = st
        if self.net.tracing:
            self.net.record("state:" + st.value, flow=self.flow, cwnd=self.cwnd)

    # --- timers ------------------------------------------------------------------
    def _arm_rto(self, restart=False):
        if self._rto_armed and not restart:
            return
        self._rto_gen += 1
        self._rto_armed = True
        self.loop.schedule(self.loop._now + self.rto, self._on_rto, self._rto_gen)

    def _cancel_rto(self):
        self._rto_gen += 1
        self._rto_armed = False

    def _on_rto(self, gen):
        if gen != self._rto_gen or self.state == State.CLOSED:
            return
        self._rto_armed = False
        self.rto = min(self.rto * 2, MAX_RTO)
        if self.state == State.SYN_SENT:
            self._syn_tries += 1
            if self._syn_tries > SYN_RETRIES:
                self._fail(TimeoutError(f"connect to {self.raddr}:{self.rport} timed out"))
                return
            self._send_syn()
            return
        if self.state == State.SYN_RECEIVED:
            self._syn_tries += 1
            if self._syn_tries > SYN_RETRIES:
                self._drop()
                return
            self._emit(self._packet(SYN | ACK))
            self._arm_rto()
            return
        if self.snd_max == self.snd_una and not (self.fin_sent and not self.fin_acked):
            return
        # go-back-N from the first unacknowledged byte
        self.ssthresh = max(self.cwnd / 2.0, 2.0)
        self.cwnd = 1.0
        self.in_recovery = False
        self.dupacks = 0
        self.snd_nxt = self.snd_una
        if self.fin_sent and not self.fin_acked:
            self.fin_sent = False
        self._log_cwnd()
        self._try_send()
        self._arm_rto()

    def _rtt_sample(self, sample: float):
        if sample <= 0:
            return
        if self.srtt is None:
            self.srtt = sample
            self.rttvar = sample / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - sample)
            self.srtt = 0.875 * self.srtt + 0.125 * sample
        self.rto = min(max(self.srtt + 4 * self.rttvar, MIN_RTO), MAX_RTO)

    def _log_cwnd(self):
        self.cwnd_log.append((self.loop._now, self.cwnd))

    # --- connection setup --------------------------------------------------------
    def _send_syn(self):
        self._emit(self._packet(SYN))
        self._arm_rto(restart=True)

    def connect(self):
        self._set_state(State.SYN_SENT)
        self._send_syn()

    def _become_established(self):
        self._set_state(State.ESTABLISHED)
        self._syn_tries = 0
        self.rto = max(self.rto, MIN_RTO) if self.srtt is None else self.rto
        self._cancel_rto()
        if not self.established.done():
            self.established.set_result(self)
        self._try_send()

    # --- app API -----------------------------------------------------------------
    def write(self, data: bytes):
        if self.reset:
            raise ConnectionResetError(self.flow)
        if self.eof_requested or self.state == State.CLOSED:
            raise BrokenPipeError(self.flow)
        if data:
            self.sndbuf += data
            self._try_send()

    async def drain(self, limit: int | None = None):
        """Wait until at most `limit` unacknowledged bytes remain (default: the send buffer)."""
        limit = self.params.send_buffer if limit is None else limit
        while len(self.sndbuf) > limit:
            if self.reset:
                raise ConnectionResetError(self.flow)
            if self.state == State.CLOSED:
                raise ConnectionAbortedError(self.flow)
            fut = self.loop.create_future()
            self._drain_waiters.append(fut)
            await fut
        if self.reset:
            raise ConnectionResetError(self.flow)

    def write_eof(self):
        if not self.eof_requested:
            self.eof_requested = True
            self._try_send()

    async def read(self, n: int = -1) -> bytes:
        while not self.rcvbuf:
            if self.reset:
                raise ConnectionResetError(self.flow)
            if self.eof:
                return b""
            if self.state == State.CLOSED:
                raise ConnectionAbortedError(self.flow)
            fut = self._read_waiter = self.loop.create_future()
            await fut
        n = len(self.rcvbuf) if n < 0 else min(n, len(self.rcvbuf))
        out = bytes(self.rcvbuf[:n])
        del self.rcvbuf[:n]
        self._maybe_window_update()
        return out

    def readable(self) -> int:
        return len(self.rcvbuf)

    def close(self):
        self.write_eof()

    def abort(self):
        if self.state != State.CLOSED:
            self._emit(self._packet(RST | ACK, self.snd_nxt))
        self._drop()

    # --- sending -----------------------------------------------------------------
    def _data_end(self) -> int:
        return self.sndbuf_base + len(self.sndbuf)

    def _pipe(self) -> int:
        pipe = self.snd_nxt - self.snd_una
        if self.in_recovery:
            pipe -= self.dupacks * self.mss
        return max(pipe, 0)

    def _try_send(self):
        if self.state not in (State.ESTABLISHED, State.FIN_WAIT):
            return
        mss = self.mss
        end = self._data_end()
        while True:
            unsent = end - self.snd_nxt
            if unsent <= 0:
                if self.eof_requested and not self.fin_sent and self.snd_nxt >= end:
                    self.fin_sent = True
                    self._emit(self._packet(FIN | ACK, end))
                    self.snd_nxt = end + 1
                    self.snd_max = max(self.snd_max, self.snd_nxt)
                    self._set_state(State.FIN_WAIT)
                    self._arm_rto()
                return
            seg = mss if unsent > mss else unsent
            pipe = self._pipe()
            if pipe + seg > int(self.cwnd) * mss:
                return
            if pipe + seg > self.peer_wnd:
                if pipe == 0:
                    self._arm_persist()
                return
            if seg < mss and not self.nodelay and self.small_sent_seq > self.snd_una:
                return  # Nagle (Minshall): one small segment outstanding at a time
            off = self.snd_nxt - self.sndbuf_base
            pkt = self._packet(ACK, self.snd_nxt, bytes(self.sndbuf[off:off + seg]))
            self.snd_nxt += seg
            if seg < mss:
                self.small_sent_seq = self.snd_nxt
            if self.snd_nxt > self.snd_max:
                self.snd_max = self.snd_nxt
            self._emit(pkt)
            self._arm_rto()

    def _retransmit_head(self):
        end = self._data_end()
        if self.snd_una >= end:
            if self.fin_sent and not self.fin_acked:
                self._emit(self._packet(FIN | ACK, end))
            return
        off = self.snd_una - self.sndbuf_base
        seg = min(self.mss, end - self.snd_una)
        self._emit(self._packet(ACK, self.snd_una, bytes(self.sndbuf[off:off + seg])))

    def _arm_persist(self):
        if self._persist_armed:
            return
        self._persist_armed = True
        self.loop.schedule(self.loop._now + max(self.rto, MIN_RTO), self._on_persist)

    def _on_persist(self):
        self._persist_armed = False
        if self.state in (State.ESTABLISHED, State.FIN_WAIT) and self.snd_nxt < self._data_end():
            if self._pipe() == 0 and self.peer_wnd < min(self.mss, self._data_end() - self.snd_nxt):
                self._emit(self._packet(PROBE | ACK, self.snd_nxt))
                self._arm_persist()

    # --- receiving ---------------------------------------------------------------
    def on_packet(self, pkt: Packet):
        flags = pkt.flags
        if flags & RST:
            self.reset = True
            self._drop(notify=True)
            return
        st = self.state
        if st == State.SYN_SENT:
            if flags & SYN and flags & ACK:
                self.peer_wnd = pkt.wnd
                if pkt.ts_echo:
                    self._rtt_sample(self.loop._now - pkt.ts_echo)
                self._emit(self._packet(ACK, 0, ts_echo=pkt.ts))
                self._become_established()
            return
        if st == State.SYN_RECEIVED:
            if flags & SYN and not flags & ACK:
                self._emit(self._packet(SYN | ACK, ts_echo=pkt.ts))
                return
            if flags & ACK:
                self.peer_wnd = pkt.wnd
                if pkt.ts_echo:
                    self._rtt_sample(self.loop._now - pkt.ts_echo)
                self._become_established()
                self.stack.accepted(self)
            else:
                return
        elif flags & SYN:
            if flags & ACK:  # our ACK to their SYN-ACK was lost
                self._emit(self._packet(ACK, self.snd_nxt, ts_echo=pkt.ts))
            return

        if flags & ACK:
            self._on_ack(pkt)
        if pkt.data or flags & (FIN | PROBE):
            self._on_data(pkt)

    def _on_ack(self, pkt: Packet):
        ack = pkt.ack
        wnd_changed = pkt.wnd != self.peer_wnd
        self.peer_wnd = pkt.wnd
        if ack > self.snd_una:
            if ack > self.snd_max:
                ack = self.snd_max
            end = self._data_end()
            data_acked = min(ack, end) - self.snd_una
            if data_acked > 0:
                del self.sndbuf[:data_acked]
                self.sndbuf_base += data_acked
            self.snd_una = ack
            if self.snd_nxt < ack:
                self.snd_nxt = ack
            if self.fin_sent and ack >= end + 1:
                self.fin_acked = True
            if pkt.ts_echo:
                self._rtt_sample(self.loop._now - pkt.ts_echo)
            if self.in_recovery:
                if ack >= self.recover:
                    self.in_recovery = False
                    self.dupacks = 0
                    self.cwnd = self.ssthresh
                    self._log_cwnd()
                else:
                    # partial ACK: repair the next hole; only the first one re-arms the RTO
                    self.dupacks = 0
                    self._retransmit_head()
                    if self._partial_acks == 0:
                        self._arm_rto(restart=True)
                    self._partial_acks += 1
            else:
                self.dupacks = 0
                if self.cwnd < self.ssthresh:
                    self.cwnd += 1.0
                else:
                    self.cwnd += 1.0 / self.cwnd
                if self.net.tracing:
                    self._log_cwnd()
            if not (self.snd_una < self.snd_max or (self.fin_sent and not self.fin_acked)):
                self._cancel_rto()
            elif not self.in_recovery:
                self._arm_rto(restart=True)
            if self._drain_waiters and len(self.sndbuf) <= self.params.send_buffer:
                waiters, self._drain_waiters = self._drain_waiters, []
                for w in waiters:
                    if not w.done():
                        w.set_result(None)
            self._try_send()
            self._maybe_finish()
        elif ack == self.snd_una and self.snd_una < self.snd_max and not pkt.data and not wnd_changed \
                and not pkt.flags & (FIN | PROBE):
            self.dupacks += 1
            if self.dupacks == 3 and not self.in_recovery and self.snd_una >= self.recover:
                self.ssthresh = max(self.cwnd / 2.0, 2.0)
                self.cwnd = self.ssthresh
                self.in_recovery = True
                self._partial_acks = 0
                self.recover = self.snd_max
                self._log_cwnd()
                self._retransmit_head()
                self._arm_rto(restart=True)
            elif self.in_recovery:
                self._try_send()
        else:
            self._try_send()

    def _on_data(self, pkt: Packet):
        seq = pkt.seq
        data = pkt.data
        limit = self.rcv_nxt + self._adv_window()
        if data:
            if seq + len(data) > limit:
                data = data[: max(0, limit - seq)]
            if seq <= self.rcv_nxt:
                fresh = data[self.rcv_nxt - seq:] if seq + len(data) > self.rcv_nxt else b""
                if fresh:
                    self.rcvbuf += fresh
                    self.rcv_nxt += len(fresh)
                    self.bytes_received += len(fresh)
                    ooo = self.ooo
                    while ooo:
                        nxt = ooo.pop(self.rcv_nxt, None)
                        if nxt is None:
                            # overlapping leftovers from go-back-N retransmits
                            stale = [s for s in ooo if s < self.rcv_nxt]
                            if not stale:
                                break
                            for s in stale:
                                chunk = ooo.pop(s)
                                if s + len(chunk) > self.rcv_nxt:
                                    ooo.setdefault(self.rcv_nxt, chunk[self.rcv_nxt - s:])
                            continue
                        self.rcvbuf += nxt
                        self.rcv_nxt += len(nxt)
                        self.bytes_received += len(nxt)
            elif data:
                self.ooo.setdefault(seq, data)
        if pkt.flags & FIN:
            self.peer_fin_seq = pkt.seq + len(pkt.data)
        if self.peer_fin_seq is not None and self.rcv_nxt == self.peer_fin_seq and not self.eof:
            self.rcv_nxt += 1
            self.eof = True
        self._emit(self._packet(ACK, self.snd_nxt, ts_echo=pkt.ts))
        if self._read_waiter is not None and not self._read_waiter.done() and (self.rcvbuf or self.eof):
            self._read_waiter.set_result(None)
        self._maybe_finish()

    def _maybe_window_update(self):
        new = self._adv_window()
        last = self.last_adv
        if new > last and (new - last >= 2 * self.mss or last < self.mss) and self.state != State.CLOSED:
            self._emit(self._packet(ACK, self.snd_nxt))

    # --- teardown ----------------------------------------------------------------
    def _maybe_finish(self):
        if self.eof and self.fin_acked and self.state != State.CLOSED:
            self._set_state(State.CLOSED)
            self._cancel_rto()
            self.stack.forget(self)

    def _fail(self, exc):
        if not self.established.done():
            self.established.set_exception(exc)
        self._drop()

    def _drop(self, notify=False):
        if self.state != State.CLOSED:
            self._set_state(State.CLOSED)
        self._cancel_rto()
        self.stack.forget(self)
        if not self.established.done():
            self.established.set_exception(
                ConnectionRefusedError(f"{self.raddr}:{self.rport} refused") if self.reset
                else ConnectionAbortedError(self.flow))
        self.stack.discard_pending(self)
        if self._read_waiter is not None and not self._read_waiter.done():
            self._read_waiter.set_result(None)
        for w in self._drain_waiters:
            if not w.done():
                w.set_result(None)
        self._drain_waiters = []


class Listener:
    def __init__(self, stack, port, handler, params_for, syn_hook):
        self.stack = stack
        self.port = port
        self.handler = handler
        self.params_for = params_for
        self.syn_hook = syn_hook
        self.accepted = 0
        self.closed = False

    def close(self):
        self.closed = True
        self.stack.listeners.pop(self.port, None)


class TcpStack:
    def __init__(self, net: Network, host):
        self.net = net
        self.host_id = host.id
        self.address = host.address
        self.conns: dict[tuple[int, str, int], TcpConnection] = {}
        self.listeners: dict[int, Listener] = {}
        self._pending: dict[TcpConnection, object] = {}
        self.time_wait: set = set()
        self.probes: dict[int, object] = {}  # local port -> future for the probe's reply
        self._next_port = 40000

    def ephemeral_port(self) -> int:
        while True:
            self._next_port += 1
            if self._next_port > 65000:
                self._next_port = 40001
            if self._next_port not in self.listeners:
                return self._next_port

    def open(self, raddr_host: str, rport: int, params: TransportParams, via=(), direct=False) -> TcpConnection:
        lport = self.ephemeral_port()
        route = self.net.route(self.host_id, raddr_host, via, direct)
        back = self.net.route(raddr_host, self.host_id, tuple(reversed(via)), direct)
        conn = TcpConnection(self, lport, raddr_host, rport, params, route, back)
        self.conns[lport, raddr_host, rport] = conn
        conn.connect()
        return conn

    def listen(self, port, handler, params_for, syn_hook=False) -> Listener:
        if port in self.listeners:
            raise OSError(f"{self.host_id}:{port} already in use")
        lst = self.listeners[port] = Listener(self, port, handler, params_for, syn_hook)
        return lst

    def receive(self, pkt: Packet):
        key = (pkt.dport, pkt.src, pkt.sport)
        if self.probes and pkt.dport in self.probes:
            fut = self.probes.pop(pkt.dport)
            if not fut.done():
                fut.set_result(self.net.loop.time())
            return
        conn = self.conns.get(key)
        if conn is not None:
            conn.on_packet(pkt)
            return
        if pkt.flags & SYN and not pkt.flags & ACK:
            lst = self.listeners.get(pkt.dport)
            if lst is None or lst.closed:
                self._reset(pkt)
                return
            params = lst.params_for(pkt.src) if lst.params_for else TransportParams()
            back = self.net.reverse(pkt.route)
            conn = TcpConnection(self, pkt.dport, pkt.src, pkt.sport, params, back, pkt.route)
            conn.peer_wnd = pkt.wnd
            self.conns[key] = conn
            conn._set_state(State.SYN_RECEIVED)
            conn._emit(conn._packet(SYN | ACK, ts_echo=pkt.ts))
            conn._arm_rto(restart=True)
            if lst.syn_hook:
                self._spawn(lst, conn)
            else:
                self._pending[conn] = lst
            return
        if key in self.time_wait:
            if pkt.flags & FIN:
                self.net.send(Packet(self.host_id, pkt.dport, pkt.src, pkt.sport, ACK, pkt.ack,
                                     pkt.seq + len(pkt.data) + 1, route=self.net.reverse(pkt.route)))
            return
        if not pkt.flags & RST:
            self._reset(pkt)

    def _reset(self, pkt):
        back = self.net.reverse(pkt.route)
        self.net.send(Packet(self.host_id, pkt.dport, pkt.src, pkt.sport, RST | ACK, pkt.ack,
                             pkt.seq + len(pkt.data), route=back))

    def accepted(self, conn: TcpConnection):
        lst = self._pending.pop(conn, None)
        if lst is not None and not lst.closed:
            self._spawn(lst, conn)

    def _spawn(self, lst: Listener, conn: TcpConnection):
        from .transport import SimIncoming
        lst.accepted += 1
        self.net.loop.create_task(lst.handler(SimIncoming(self.net, conn)))

    def discard_pending(self, conn):
        self._pending.pop(conn, None)

    def forget(self, conn: TcpConnection):
        key = (conn.lport, conn.raddr, conn.rport)
        if self.conns.get(key) is conn:
            del self.conns[key]
            if not conn.reset:
                self.time_wait.add(key)
