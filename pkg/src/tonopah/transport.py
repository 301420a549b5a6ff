"""Endpoint logic: a NewReno bulk sender with pacing and a per-packet-acking
receiver.

One sender instance drives either a plain flow (a single NONE subflow, used
for cross traffic and baselines) or a split flow (DOMINANT + NON_DOMINANT
subflows sharing one congestion window), in which case a detector can be
attached to observe RTT samples and steer the window.
"""

from collections import deque
from fractions import Fraction

from .engine import SimulationError, Simulator
from .link import DelayPath, Link
from .packet import Packet, Subflow
from .simtime import ACK_BYTES, MTU_BYTES, NS_PER_MS, NS_PER_SEC

INITIAL_CWND_PACKETS = 10
MIN_CWND_PACKETS = 2
RTO_FLOOR_NS = 200 * NS_PER_MS
RTO_GRANULARITY_NS = 1 * NS_PER_MS
RTO_CAP_NS = 60 * NS_PER_SEC
SSTHRESH_UNBOUNDED = 1 << 62
# delay-sensitive exit from the initial slow start (HyStart-style): leave
# when the RTT has risen this much above the minimum
HYSTART_FLOOR_NS = 4 * NS_PER_MS
HYSTART_CEIL_NS = 16 * NS_PER_MS


class RttEstimator:
    """RFC6298-style smoothed RTT in integer nanoseconds.

    Feed it only samples from non-retransmitted packets (Karn's rule).
    min_rtt is the lifetime minimum and never increases.
    """

    __slots__ = ("latest", "min_rtt", "srtt", "rttvar")

    def __init__(self):
        self.latest = 0
        self.min_rtt = 0
        self.srtt = 0
        self.rttvar = 0

    @property
    def initialized(self) -> bool:
        return self.srtt > 0

    def add_sample(self, rtt_ns: int) -> None:
        if rtt_ns <= 0:
            raise ValueError("rtt sample must be positive")
        self.latest = rtt_ns
        if self.min_rtt == 0 or rtt_ns < self.min_rtt:
            self.min_rtt = rtt_ns
        if self.srtt == 0:
            self.srtt = rtt_ns
            self.rttvar = rtt_ns // 2
        else:
            delta = self.srtt - rtt_ns
            self.rttvar = (3 * self.rttvar + abs(delta)) // 4
            self.srtt = (7 * self.srtt + rtt_ns) // 8

    @property
    def rto(self) -> int:
        if self.srtt == 0:
            return RTO_FLOOR_NS
        raw = self.srtt + max(RTO_GRANULARITY_NS, 4 * self.rttvar)
        return max(raw, RTO_FLOOR_NS)


class _SubflowState:
    __slots__ = ("role", "share_num", "next_seq", "highest_sent", "cum_acked",
                 "sent", "dupacks", "next_send_at", "credit", "retx_pending",
                 "pending_set", "next_txn", "flight", "txn_scanned")

    def __init__(self, role: Subflow, share_num: int):
        self.role = role
        self.share_num = share_num
        self.next_seq = 0
        self.highest_sent = -1
        self.cum_acked = -1
        # seq -> [size, last_sent_at, retransmitted, counted_in_flight,
        #         last_txn, delivered_above_hole]
        self.sent: dict[int, list] = {}
        self.dupacks = 0
        self.next_send_at = 0
        self.credit = 0
        self.retx_pending: deque = deque()
        self.pending_set: set[int] = set()
        self.next_txn = 0
        self.flight: dict[int, int] = {}   # transmission number -> seq
        self.txn_scanned = -1

    @property
    def outstanding(self) -> bool:
        return bool(self.sent)

    def queue_retx(self, seq: int) -> None:
        if seq not in self.pending_set:
            self.pending_set.add(seq)
            self.retx_pending.append(seq)

    def next_retx(self) -> int | None:
        while self.retx_pending:
            seq = self.retx_pending[0]
            if seq in self.pending_set and seq in self.sent:
                return seq
            self.retx_pending.popleft()
            self.pending_set.discard(seq)
        return None


class NewRenoSender:
    """Bulk data sender with NewReno congestion control and pacing.

    The congestion window is shared across all subflows; the per-subflow rate
    split is enforced by pacing each subflow at its share of the total pacing
    rate (cwnd/srtt) and by a byte-deficit counter that picks which subflow
    gets the next cleared packet.
    """

    def __init__(self, sim: Simulator, link: Link, flow_id: int,
                 roles: tuple[Subflow, ...] = (Subflow.NONE,),
                 dominant_share: Fraction = Fraction(2, 3),
                 detector=None, start_at: int = 0, mtu: int = MTU_BYTES):
        self.sim = sim
        self.link = link
        self.flow_id = flow_id
        self.mtu = mtu
        self.detector = detector
        self.start_at = start_at
        self.rtt = RttEstimator()

        if len(roles) == 1:
            shares = {roles[0]: 1}
            self.share_den = 1
        elif set(roles) == {Subflow.DOMINANT, Subflow.NON_DOMINANT}:
            if not Fraction(1, 2) < dominant_share < 1:
                raise ValueError("dominant share must be in (1/2, 1)")
            self.share_den = dominant_share.denominator
            shares = {
                Subflow.DOMINANT: dominant_share.numerator,
                Subflow.NON_DOMINANT: self.share_den - dominant_share.numerator,
            }
        else:
            raise ValueError(f"unsupported subflow roles: {roles}")
        self.subflows = [_SubflowState(r, shares[r]) for r in roles]
        self._by_role = {sf.role: sf for sf in self.subflows}

        self.cwnd = INITIAL_CWND_PACKETS * mtu
        self.ssthresh = SSTHRESH_UNBOUNDED
        self.in_flight = 0
        self._ca_stash = 0
        self._slow_start = True
        self._recovery: tuple | None = None   # (subflow_state, recover_seq)
        self._last_reduction_at = -1
        self.detection_backoffs = 0

        self._rto_deadline: int | None = None
        self._rto_timer_at: int | None = None
        self._rto_backoff = 1
        self._wake_at: int | None = None

        sim.schedule(start_at, self._on_start)

    # -- introspection ----------------------------------------------------

    @property
    def in_recovery(self) -> bool:
        return self._recovery is not None

    @property
    def phase(self) -> str:
        """Stored phase: a detection-driven window reduction does not re-enter
        slow start even if it pulls cwnd below ssthresh."""
        if self._recovery is not None:
            return "fast_recovery"
        if self._slow_start:
            return "slow_start"
        return "congestion_avoidance"

    def subflow(self, role: Subflow) -> _SubflowState:
        return self._by_role[role]

    def cum_acked_by_role(self) -> dict[Subflow, int]:
        return {sf.role: sf.cum_acked for sf in self.subflows}

    # -- pacing ------------------------------------------------------------

    def pacing_rate_bps(self) -> int:
        """Total pacing rate cwnd/srtt; 0 means unpaced (no RTT sample yet)."""
        if not self.rtt.initialized:
            return 0
        return self.cwnd * 8 * NS_PER_SEC // self.rtt.srtt

    def _pace_gap_ns(self, sf: _SubflowState, size: int) -> int:
        rate = self.pacing_rate_bps()
        if rate <= 0:
            return 0
        sub_rate = rate * sf.share_num // self.share_den
        if sub_rate <= 0:
            sub_rate = 1
        bits = size * 8
        return (bits * NS_PER_SEC + sub_rate - 1) // sub_rate

    # -- send path ---------------------------------------------------------

    def _on_start(self) -> None:
        if self.detector is not None:
            self.detector.start(self.sim.now)
        self._send_loop()

    def _send_loop(self) -> None:
        """Send while the window has room: pending retransmissions first,
        then new data on the largest-deficit pacing-ready subflow, otherwise
        sleep until the earliest pacer opens (work conserving: a subflow
        whose pacer lags never blocks the others)."""
        now = self.sim.now
        while self.in_flight < self.cwnd:
            retx = None
            for sf in self.subflows:
                seq = sf.next_retx()
                if seq is not None and sf.next_send_at <= now:
                    retx = (sf, seq)
                    break
            if retx is not None:
                self._retransmit(retx[0], retx[1], now, paced=True)
                continue
            best = None
            for sf in self.subflows:
                if sf.next_send_at <= now and (best is None or sf.credit > best.credit):
                    best = sf
            if best is not None:
                self._transmit_new(best, now)
                continue
            self._arm_wake(min(sf.next_send_at for sf in self.subflows))
            return

    def _arm_wake(self, at: int) -> None:
        if self._wake_at is not None and self._wake_at <= at:
            return
        self._wake_at = at
        self.sim.schedule(at, self._on_wake)

    def _on_wake(self) -> None:
        self._wake_at = None
        self._send_loop()

    def _transmit_new(self, sf: _SubflowState, now: int) -> None:
        size = self.mtu
        seq = sf.next_seq
        sf.next_seq = seq + 1
        sf.highest_sent = seq
        txn = sf.next_txn
        sf.next_txn = txn + 1
        sf.sent[seq] = [size, now, False, True, txn, False]
        sf.flight[txn] = seq
        self.in_flight += size
        if len(self.subflows) > 1:
            for other in self.subflows:
                other.credit += other.share_num * size
            sf.credit -= self.share_den * size
        pkt = Packet(self.flow_id, sf.role, seq, size, sent_at=now, txn=txn)
        self.sim.stats.flow(self.flow_id).sent += 1
        sf.next_send_at = now + self._pace_gap_ns(sf, size)
        if self.detector is not None:
            self.detector.note_sent(sf.role, seq)
        self.link.send(pkt, now)
        self._ensure_rto(now)

    def _retransmit(self, sf: _SubflowState, seq: int, now: int,
                    paced: bool = False) -> None:
        rec = sf.sent.get(seq)
        if rec is None or rec[5]:       # acked, or already delivered above a hole
            sf.pending_set.discard(seq)
            return
        sf.pending_set.discard(seq)
        txn = sf.next_txn
        sf.next_txn = txn + 1
        sf.flight[txn] = seq
        rec[1] = now
        rec[2] = True
        rec[4] = txn
        if not rec[3]:
            rec[3] = True
            self.in_flight += rec[0]
        pkt = Packet(self.flow_id, sf.role, seq, rec[0], sent_at=now, txn=txn,
                     retransmission=True)
        fc = self.sim.stats.flow(self.flow_id)
        fc.sent += 1
        fc.retransmits += 1
        if paced:
            sf.next_send_at = now + self._pace_gap_ns(sf, rec[0])
        # un-paced fast retransmits bypass pacing and the window gate
        self.link.send(pkt, now)
        self._ensure_rto(now)

    def _note_loss(self, sent_at: int, now: int) -> None:
        """One window reduction per congestion event: only a loss of a copy
        sent after the previous reduction starts a new event."""
        if sent_at > self._last_reduction_at:
            self.ssthresh = max(self.cwnd // 2, MIN_CWND_PACKETS * self.mtu)
            self.cwnd = self.ssthresh
            self._ca_stash = 0
            self._slow_start = False
            self._last_reduction_at = now
            if self.detector is not None:
                self.detector.on_loss_event(now)

    def _mark_lost(self, sf: _SubflowState, seq: int, rec: list, now: int) -> None:
        if rec[3]:
            rec[3] = False
            self.in_flight -= rec[0]
        sf.queue_retx(seq)
        self._note_loss(rec[1], now)

    def _note_copy_delivered(self, sf: _SubflowState, ack: Packet) -> None:
        """Every data packet is acked individually, so the echoed transmission
        number gives exact per-copy receipt: the copy is out of the network
        even when a hole below it keeps the cumulative ack from advancing."""
        seq = sf.flight.pop(ack.echo_txn, None)
        if seq is None:
            return
        rec = sf.sent.get(seq)
        if rec is None or rec[4] != ack.echo_txn:
            return
        rec[5] = True
        if rec[3]:
            rec[3] = False
            self.in_flight -= rec[0]
        sf.pending_set.discard(seq)

    def _detect_losses(self, sf: _SubflowState, ack: Packet, now: int) -> None:
        """Transmission-number threshold loss detection.

        The subflow's lane never reorders, so a copy whose transmission
        number trails the highest one the receiver reports by more than the
        reorder threshold was dropped — this catches original transmissions
        and re-lost retransmissions alike, one round trip after the loss."""
        cutoff = ack.acked_txn - 3
        if cutoff <= sf.txn_scanned:
            return
        flight = sf.flight
        sent = sf.sent
        for txn in range(sf.txn_scanned + 1, cutoff + 1):
            seq = flight.pop(txn, None)
            if seq is None:
                continue
            rec = sent.get(seq)
            if rec is None or rec[4] != txn or rec[5]:
                continue   # acked, superseded by a newer copy, or delivered
            self._mark_lost(sf, seq, rec, now)
        sf.txn_scanned = cutoff

    # -- ack path ----------------------------------------------------------

    def on_ack(self, ack: Packet, now: int) -> None:
        sf = self._by_role[ack.acked_subflow]
        if ack.acked_seq > sf.highest_sent:
            raise SimulationError(
                f"flow {self.flow_id}: ack covers never-sent seq {ack.acked_seq}"
            )
        self._note_copy_delivered(sf, ack)
        if ack.acked_seq > sf.cum_acked:
            newly = 0
            for seq in range(sf.cum_acked + 1, ack.acked_seq + 1):
                rec = sf.sent.pop(seq, None)
                if rec is not None:
                    newly += rec[0]
                    if rec[3]:
                        self.in_flight -= rec[0]
            sf.cum_acked = ack.acked_seq
            sf.dupacks = 0
            rtt_sample = now - ack.echo_sent_at
            if not ack.echo_retransmit:
                self.rtt.add_sample(rtt_sample)
                self._maybe_exit_initial_slow_start(rtt_sample)
                if self.detector is not None:
                    self.detector.on_rtt_sample(ack.acked_subflow, rtt_sample, now)
            if self._recovery is not None:
                rec_sf, rec_seq = self._recovery
                if rec_sf is sf:
                    if sf.cum_acked >= rec_seq:
                        self._recovery = None
                    else:
                        # partial ack: make sure the next hole is on the wire
                        self._ensure_hole_repair(sf, now)
            elif newly > 0:
                self._grow_cwnd(newly)
            self._rearm_rto(now)
            if self.detector is not None:
                if self.detector.on_cum_advance(self.cum_acked_by_role(), now,
                                                self.cwnd, self.in_recovery):
                    self.apply_detection_backoff()
        else:
            if sf.outstanding:
                sf.dupacks += 1
                if sf.dupacks == 3:
                    self._on_triple_dupack(sf, now)
        self._detect_losses(sf, ack, now)
        self._send_loop()

    def _maybe_exit_initial_slow_start(self, rtt_sample: int) -> None:
        """Leave the initial slow start when queuing delay builds instead of
        doubling into packet loss, the way QUIC stacks do.  Applies only
        while ssthresh is still unbounded; recovery after a timeout keeps the
        classic behavior."""
        if not self._slow_start or self.ssthresh != SSTHRESH_UNBOUNDED:
            return
        min_rtt = self.rtt.min_rtt
        rise = min(max(HYSTART_FLOOR_NS, min_rtt // 8), HYSTART_CEIL_NS)
        if rtt_sample >= min_rtt + rise:
            self.ssthresh = self.cwnd
            self._slow_start = False

    def _grow_cwnd(self, newly_acked: int) -> None:
        if self._slow_start:
            self.cwnd += newly_acked
            if self.cwnd >= self.ssthresh:
                self._slow_start = False
        else:
            self._ca_stash += newly_acked
            steps = self._ca_stash // self.cwnd
            if steps:
                self._ca_stash -= steps * self.cwnd
                self.cwnd += steps * self.mtu

    def _on_triple_dupack(self, sf: _SubflowState, now: int) -> None:
        # window reductions are driven by the exact per-copy loss marking;
        # the dupack threshold only opens the recovery episode and makes
        # sure the head hole is being repaired
        if self._recovery is None:
            self._recovery = (sf, sf.highest_sent)
        self._ensure_hole_repair(sf, now)

    def _ensure_hole_repair(self, sf: _SubflowState, now: int) -> None:
        """Fast-retransmit the head hole unless a copy of it is already in
        the network or queued for the paced retransmission path (exact
        per-copy accounting makes that knowable)."""
        hole = sf.cum_acked + 1
        rec = sf.sent.get(hole)
        if rec is None or rec[5] or rec[3] or hole in sf.pending_set:
            return
        self._retransmit(sf, hole, now)

    def apply_detection_backoff(self, backoff: Fraction = Fraction(1, 8)) -> None:
        keep_num = backoff.denominator - backoff.numerator
        den = backoff.denominator
        reduced = (self.cwnd * keep_num + den - 1) // den
        self.cwnd = max(reduced, MIN_CWND_PACKETS * self.mtu)
        self.detection_backoffs += 1

    # -- retransmission timeout ---------------------------------------------

    def _current_rto(self) -> int:
        return min(self.rtt.rto * self._rto_backoff, RTO_CAP_NS)

    def _ensure_rto(self, now: int) -> None:
        if self._rto_deadline is None:
            self._rto_deadline = now + self._current_rto()
            self._schedule_rto_timer(self._rto_deadline)

    def _rearm_rto(self, now: int) -> None:
        self._rto_backoff = 1
        if any(sf.outstanding for sf in self.subflows):
            self._rto_deadline = now + self._current_rto()
            self._schedule_rto_timer(self._rto_deadline)
        else:
            self._rto_deadline = None

    def _schedule_rto_timer(self, at: int) -> None:
        if self._rto_timer_at is not None and self._rto_timer_at <= at:
            return
        self._rto_timer_at = at
        self.sim.schedule(at, self._on_rto_timer)

    def _on_rto_timer(self) -> None:
        self._rto_timer_at = None
        deadline = self._rto_deadline
        if deadline is None:
            return
        now = self.sim.now
        if now < deadline:
            self._schedule_rto_timer(deadline)
            return
        self._fire_rto(now)

    def _fire_rto(self, now: int) -> None:
        outstanding = [sf for sf in self.subflows if sf.outstanding]
        if not outstanding:
            self._rto_deadline = None
            return
        self.ssthresh = max(self.cwnd // 2, MIN_CWND_PACKETS * self.mtu)
        self.cwnd = MIN_CWND_PACKETS * self.mtu
        self._ca_stash = 0
        self._slow_start = True
        self._recovery = None
        self._last_reduction_at = now
        self._rto_backoff = min(self._rto_backoff * 2, 64)
        if self.detector is not None:
            self.detector.on_loss_event(now)
        # go-back-N: all undelivered unacked data is presumed lost and resent
        # as the window reopens from the slow-start floor
        for sf in outstanding:
            sf.dupacks = 0
            for seq in sorted(sf.sent):
                rec = sf.sent[seq]
                if rec[5]:
                    continue
                if rec[3]:
                    rec[3] = False
                    self.in_flight -= rec[0]
                sf.queue_retx(seq)
        self._rto_deadline = now + self._current_rto()
        self._schedule_rto_timer(self._rto_deadline)
        self._send_loop()


class _RecvState:
    __slots__ = ("cum", "highest_txn", "pending")

    def __init__(self):
        self.cum = -1
        self.highest_txn = -1
        self.pending: set[int] = set()


class Receiver:
    """Acks every data packet with the subflow's cumulative sequence and an
    exact echo of the packet's send timestamp."""

    def __init__(self, sim: Simulator, reverse: DelayPath, flow_id: int):
        self.sim = sim
        self.reverse = reverse
        self.flow_id = flow_id
        self._state: dict[Subflow, _RecvState] = {}

    def on_data(self, pkt: Packet, now: int) -> None:
        st = self._state.get(pkt.subflow)
        if st is None:
            st = self._state[pkt.subflow] = _RecvState()
        if pkt.txn > st.highest_txn:
            st.highest_txn = pkt.txn
        if pkt.seq == st.cum + 1:
            st.cum += 1
            pending = st.pending
            while st.cum + 1 in pending:
                pending.remove(st.cum + 1)
                st.cum += 1
        elif pkt.seq > st.cum:
            st.pending.add(pkt.seq)
        ack = Packet(self.flow_id, Subflow.NONE, 0, ACK_BYTES, sent_at=now,
                     is_ack=True, acked_seq=st.cum, acked_subflow=pkt.subflow,
                     acked_txn=st.highest_txn, echo_txn=pkt.txn,
                     echo_sent_at=pkt.sent_at,
                     echo_retransmit=pkt.retransmission)
        self.sim.stats.flow(self.flow_id).acks_sent += 1
        self.reverse.send(ack, now)

    def received_through(self, role: Subflow) -> int:
        st = self._state.get(role)
        return st.cum if st is not None else -1
