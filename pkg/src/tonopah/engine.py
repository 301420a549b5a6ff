"""Deterministic discrete-event engine.

Events fire in (time, insertion order) order, so simultaneous events are
fully deterministic.  A run is single-threaded and self-contained; the
harness parallelizes across independent runs, never within one.
"""

from heapq import heappop, heappush


class SimulationError(RuntimeError):
    """Fatal inconsistency inside a run (e.g. scheduling into the past)."""


class EventHandle:
    """Returned by schedule(); cancel() makes the event a no-op."""

    __slots__ = ("callback", "cancelled")

    def __init__(self, callback):
        self.callback = callback
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class FlowCounters:
    """Per-flow packet bookkeeping used for conservation checks and metrics."""

    __slots__ = (
        "sent", "delivered", "dropped", "retransmits",
        "delivered_payload_bytes", "acks_sent",
    )

    def __init__(self):
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.retransmits = 0
        self.delivered_payload_bytes = 0
        self.acks_sent = 0


class SimStats:
    """Counters accumulated over one run."""

    def __init__(self):
        self.flows: dict[int, FlowCounters] = {}
        self.link_tx_bytes = 0          # bytes serialized on the bottleneck
        self.sojourn_sum_ns = 0         # over data packets leaving the bottleneck
        self.sojourn_count = 0
        self.in_pipe = 0                # packets inside qdisc/serializer/propagation

    def flow(self, flow_id: int) -> FlowCounters:
        fc = self.flows.get(flow_id)
        if fc is None:
            fc = self.flows[flow_id] = FlowCounters()
        return fc

    @property
    def mean_sojourn_ns(self) -> float:
        if self.sojourn_count == 0:
            return 0.0
        return self.sojourn_sum_ns / self.sojourn_count


class Simulator:
    """Event loop with an integer-nanosecond clock starting at 0."""

    def __init__(self):
        self.now = 0
        self.stats = SimStats()
        self._heap: list = []
        self._seq = 0

    def schedule(self, at: int, callback) -> EventHandle:
        if at < self.now:
            raise SimulationError(
                f"scheduled event at {at} ns before current clock {self.now} ns"
            )
        handle = EventHandle(callback)
        self._seq += 1
        heappush(self._heap, (at, self._seq, handle))
        return handle

    def run_until(self, end: int) -> SimStats:
        """Process every event with time <= end, then jump the clock to end."""
        heap = self._heap
        while heap:
            at, _, handle = heap[0]
            if at > end:
                break
            heappop(heap)
            if handle.cancelled:
                continue
            self.now = at
            handle.callback()
        self.now = end
        return self.stats
