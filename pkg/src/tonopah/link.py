"""The dumbbell's links.

The forward direction is the bottleneck: a qdisc feeding a serializer that
drains at line rate, one packet at a time, plus fixed propagation.  The
return direction carries only acks and is modeled as pure propagation delay
(effectively infinite rate), so the forward queue is the only shared
resource.
"""

from .engine import Simulator
from .packet import Packet
from .simtime import serialization_ns


class Link:
    """One-directional bottleneck link."""

    def __init__(self, sim: Simulator, rate_bps: int, prop_delay_ns: int, qdisc):
        if rate_bps <= 0:
            raise ValueError("link rate must be positive")
        if prop_delay_ns < 0:
            raise ValueError("propagation delay must be non-negative")
        self.sim = sim
        self.rate_bps = rate_bps
        self.prop_delay_ns = prop_delay_ns
        self.qdisc = qdisc
        self._busy = False
        self._receivers: dict[int, object] = {}

    def attach_receiver(self, flow_id: int, receiver) -> None:
        self._receivers[flow_id] = receiver

    def send(self, pkt: Packet, now: int) -> None:
        stats = self.sim.stats
        accepted = self.qdisc.enqueue(pkt, now)
        if accepted:
            stats.in_pipe += 1
        else:
            stats.flow(pkt.flow_id).dropped += 1
        self._collect_drops()
        if accepted and not self._busy:
            self._start_next(now)

    def _collect_drops(self) -> None:
        stats = self.sim.stats
        for dropped in self.qdisc.take_drops():
            stats.flow(dropped.flow_id).dropped += 1
            stats.in_pipe -= 1

    def _start_next(self, now: int) -> None:
        item = self.qdisc.dequeue(now)
        self._collect_drops()
        if item is None:
            self._busy = False
            return
        self._busy = True
        pkt, enqueued_at = item
        done = now + serialization_ns(pkt.size_bytes, self.rate_bps)
        self.sim.schedule(done, lambda: self._on_serialized(pkt, enqueued_at, done))

    def _on_serialized(self, pkt: Packet, enqueued_at: int, done: int) -> None:
        stats = self.sim.stats
        stats.link_tx_bytes += pkt.size_bytes
        # sojourn = time from arrival at the qdisc to leaving the wire
        stats.sojourn_sum_ns += done - enqueued_at
        stats.sojourn_count += 1
        arrival = done + self.prop_delay_ns
        self.sim.schedule(arrival, lambda: self._deliver(pkt, arrival))
        self._start_next(done)

    def _deliver(self, pkt: Packet, now: int) -> None:
        stats = self.sim.stats
        stats.in_pipe -= 1
        fc = stats.flow(pkt.flow_id)
        fc.delivered += 1
        fc.delivered_payload_bytes += pkt.size_bytes
        receiver = self._receivers.get(pkt.flow_id)
        if receiver is not None:
            receiver.on_data(pkt, now)


class DelayPath:
    """Uncongested path with fixed one-way delay (the ack return direction)."""

    def __init__(self, sim: Simulator, prop_delay_ns: int):
        self.sim = sim
        self.prop_delay_ns = prop_delay_ns
        self._receivers: dict[int, object] = {}

    def attach_receiver(self, flow_id: int, receiver) -> None:
        self._receivers[flow_id] = receiver

    def send(self, pkt: Packet, now: int) -> None:
        receiver = self._receivers[pkt.flow_id]
        arrival = now + self.prop_delay_ns
        self.sim.schedule(arrival, lambda: receiver.on_ack(pkt, arrival))
