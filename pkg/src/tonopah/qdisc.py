"""Bottleneck queue disciplines: pfifo (drop-tail), fq (per-flow DRR) and
fq_codel (per-flow DRR with CoDel AQM).

All three share one interface: enqueue / dequeue / take_drops / occupancy.
Flows are classified by the exact (flow_id, subflow) pair; there is no hash
collision in this model.
"""

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

from .packet import Packet
from .simtime import MTU_BYTES, NS_PER_MS


class QdiscKind(Enum):
    DROP_TAIL = "pfifo"
    FQ_DRR = "fq"
    FQ_CODEL = "fq_codel"


@dataclass(frozen=True)
class QdiscConfig:
    kind: QdiscKind
    buffer_packets: int = 100           # whole queue (pfifo) or per flow (fq)
    quantum_bytes: int = 1514           # DRR quantum, Linux-style one MTU + header
    codel_target_ns: int = 5 * NS_PER_MS
    codel_interval_ns: int = 100 * NS_PER_MS
    total_limit_packets: int = 10240    # fq_codel overall packet limit

    def __post_init__(self) -> None:
        if self.buffer_packets < 1:
            raise ValueError("buffer_packets must be >= 1")
        if self.quantum_bytes < MTU_BYTES:
            raise ValueError("quantum_bytes must cover the largest packet")


class CodelState:
    """CoDel drop decision, evaluated once per candidate head packet.

    Drops start only after the head sojourn has stayed above target for a
    full interval; while dropping, successive drop times advance by
    interval/sqrt(count).  Dropping ends as soon as a head packet is back
    under target (or the queue is down to one packet's worth of bytes).
    """

    __slots__ = ("target", "interval", "first_above_at", "drop_next", "count",
                 "dropping")

    def __init__(self, target_ns: int, interval_ns: int):
        self.target = target_ns
        self.interval = interval_ns
        self.first_above_at = 0     # 0 means "not currently above target"
        self.drop_next = 0
        self.count = 0
        self.dropping = False

    def _control_law(self, t: int) -> int:
        return t + int(round(self.interval / math.sqrt(self.count)))

    def should_drop(self, sojourn_ns: int, now: int, backlog_bytes: int) -> bool:
        if sojourn_ns < self.target or backlog_bytes <= MTU_BYTES:
            self.first_above_at = 0
            self.dropping = False
            return False
        if self.first_above_at == 0:
            self.first_above_at = now
            return False
        if self.dropping:
            if now >= self.drop_next:
                self.count += 1
                self.drop_next = self._control_law(self.drop_next)
                return True
            return False
        if now - self.first_above_at >= self.interval:
            self.dropping = True
            # re-entering a drop state shortly after leaving one resumes at a
            # decayed count instead of restarting from scratch
            if self.drop_next > 0 and now - self.drop_next < self.interval:
                self.count = self.count - 2 if self.count > 2 else 1
            else:
                self.count = 1
            self.drop_next = self._control_law(now)
            return True
        return False


class DropTailQueue:
    """Single shared FIFO; arriving packets are rejected when full."""

    __slots__ = ("buffer_packets", "_packets", "_dropped")

    def __init__(self, config: QdiscConfig):
        self.buffer_packets = config.buffer_packets
        self._packets: deque = deque()
        self._dropped: list[Packet] = []

    def __len__(self) -> int:
        return len(self._packets)

    def enqueue(self, pkt: Packet, now: int) -> bool:
        if len(self._packets) >= self.buffer_packets:
            return False
        self._packets.append((pkt, now))
        return True

    def dequeue(self, now: int):
        if self._packets:
            return self._packets.popleft()
        return None

    def take_drops(self) -> list[Packet]:
        drops, self._dropped = self._dropped, []
        return drops


class _FlowQueue:
    __slots__ = ("key", "packets", "bytes", "deficit", "needs_quantum",
                 "active", "codel")

    def __init__(self, key, codel):
        self.key = key
        self.packets: deque = deque()   # (Packet, enqueue_ns)
        self.bytes = 0
        self.deficit = 0
        self.needs_quantum = True
        self.active = False
        self.codel = codel


class _FairQueueBase:
    """Deficit round robin over per-(flow_id, subflow) queues.

    Each backlogged queue receives one quantum of deficit per round visit and
    is served while the deficit covers its head packet; the deficit resets to
    zero whenever the queue empties.
    """

    def __init__(self, config: QdiscConfig):
        self.config = config
        self._queues: dict = {}
        self._active: deque = deque()
        self._dropped: list[Packet] = []
        self._total = 0

    def __len__(self) -> int:
        return self._total

    def occupancy(self, key) -> int:
        q = self._queues.get(key)
        return len(q.packets) if q is not None else 0

    def _queue_for(self, pkt: Packet) -> _FlowQueue:
        key = (pkt.flow_id, pkt.subflow)
        q = self._queues.get(key)
        if q is None:
            q = self._queues[key] = _FlowQueue(key, self._new_codel())
        return q

    def _new_codel(self):
        return None

    def _admit(self, q: _FlowQueue, pkt: Packet, now: int) -> bool:
        raise NotImplementedError

    def enqueue(self, pkt: Packet, now: int) -> bool:
        q = self._queue_for(pkt)
        if not self._admit(q, pkt, now):
            return False
        q.packets.append((pkt, now))
        q.bytes += pkt.size_bytes
        self._total += 1
        if not q.active:
            q.active = True
            q.needs_quantum = True
            self._active.append(q)
        return True

    def _deactivate_head(self, q: _FlowQueue) -> None:
        q.active = False
        q.deficit = 0
        self._active.popleft()

    def _drop_from(self, q: _FlowQueue) -> None:
        pkt, _ = q.packets.popleft()
        q.bytes -= pkt.size_bytes
        self._total -= 1
        self._dropped.append(pkt)

    def _head_past_codel(self, q: _FlowQueue, now: int):
        if q.codel is None:
            return q.packets[0]
        while q.packets:
            pkt, enq = q.packets[0]
            if q.codel.should_drop(now - enq, now, q.bytes):
                self._drop_from(q)
            else:
                return (pkt, enq)
        return None

    def dequeue(self, now: int):
        active = self._active
        quantum = self.config.quantum_bytes
        while active:
            q = active[0]
            if not q.packets:
                self._deactivate_head(q)
                continue
            if q.needs_quantum:
                q.deficit += quantum
                q.needs_quantum = False
            head = self._head_past_codel(q, now)
            if head is None:
                self._deactivate_head(q)
                continue
            pkt, enq = head
            if q.deficit >= pkt.size_bytes:
                q.packets.popleft()
                q.bytes -= pkt.size_bytes
                self._total -= 1
                q.deficit -= pkt.size_bytes
                if not q.packets:
                    self._deactivate_head(q)
                return (pkt, enq)
            # deficit exhausted: to the back of the round, keep the remainder
            q.needs_quantum = True
            active.popleft()
            active.append(q)
        return None

    def take_drops(self) -> list[Packet]:
        drops, self._dropped = self._dropped, []
        return drops


class FqDrrQueue(_FairQueueBase):
    """fq model: DRR with a per-flow tail-drop buffer."""

    def _admit(self, q: _FlowQueue, pkt: Packet, now: int) -> bool:
        return len(q.packets) < self.config.buffer_packets


class FqCodelQueue(_FairQueueBase):
    """fq_codel model: DRR + per-queue CoDel, overall packet limit with
    drop-from-the-longest-queue overflow."""

    def _new_codel(self) -> CodelState:
        return CodelState(self.config.codel_target_ns, self.config.codel_interval_ns)

    def _admit(self, q: _FlowQueue, pkt: Packet, now: int) -> bool:
        if self._total >= self.config.total_limit_packets:
            longest = max(self._queues.values(),
                          key=lambda fq: (len(fq.packets), fq.key))
            if longest.packets:
                self._drop_from(longest)
        return True


def build_qdisc(config: QdiscConfig):
    if config.kind is QdiscKind.DROP_TAIL:
        return DropTailQueue(config)
    if config.kind is QdiscKind.FQ_DRR:
        return FqDrrQueue(config)
    if config.kind is QdiscKind.FQ_CODEL:
        return FqCodelQueue(config)
    raise ValueError(f"unknown qdisc kind: {config.kind!r}")
