"""Continuous fair-queuing detection.

A split flow keeps per-round-trip averages of each subflow's queuing delay
(RTT sample minus the shared lifetime-minimum RTT).  At the end of every
epoch — one round trip, closed when the highest sequences outstanding at the
epoch's start are acked on both subflows — the dominant subflow's average is
compared against the non-dominant one's: a gap of at least theta means the
bottleneck is isolating the subflows, i.e. fair queuing is present.

The boolean signal holds its value through epochs that yield no decision
(missing samples on a subflow, or loss recovery distorting the measurements).
"""

from dataclasses import dataclass, field
from fractions import Fraction

from .packet import Subflow
from .simtime import MTU_BYTES, NS_PER_MS, NS_PER_SEC


@dataclass(frozen=True)
class TonopahConfig:
    dominant_share: Fraction = Fraction(2, 3)
    theta_ns: int = 5 * NS_PER_MS
    backoff: Fraction = Fraction(1, 8)

    def __post_init__(self) -> None:
        if not Fraction(1, 2) < self.dominant_share < 1:
            raise ValueError("dominant_share must be in (1/2, 1)")
        if self.theta_ns <= 0:
            raise ValueError("theta must be positive")
        if not 0 < self.backoff < 1:
            raise ValueError("backoff must be in (0, 1)")


@dataclass
class EpochDecision:
    """One row of the per-epoch log: averages in ns, decision tri-state."""

    at_ns: int
    avg_dominant_ns: int
    avg_nondominant_ns: int
    detected: bool | None   # None = no decision this epoch (signal held)


@dataclass
class DetectorState:
    fq_detected: bool = False
    transitions: list = field(default_factory=list)   # (time_ns, bool)
    epoch_log: list = field(default_factory=list)     # EpochDecision
    epochs_completed: int = 0
    decisions_made: int = 0


_ROLES = (Subflow.DOMINANT, Subflow.NON_DOMINANT)


class FairQueuingDetector:
    """Per-flow detector driven by the sender's ack processing."""

    def __init__(self, config: TonopahConfig | None = None, mtu: int = MTU_BYTES):
        self.config = config or TonopahConfig()
        self.mtu = mtu
        self.state = DetectorState()
        self.base_rtt_ns = 0          # shared lifetime minimum over both subflows
        self._sum = {r: 0 for r in _ROLES}
        self._count = {r: 0 for r in _ROLES}
        self._markers = {r: -1 for r in _ROLES}
        self._highest_sent = {r: -1 for r in _ROLES}
        self._epoch_start = 0
        self._tainted = False
        self._cooldown = False   # reduction applied last epoch; measure first

    # -- sender hooks --------------------------------------------------------

    def start(self, now: int) -> None:
        self._epoch_start = now

    def note_sent(self, role: Subflow, seq: int) -> None:
        self._highest_sent[role] = seq

    def on_loss_event(self, now: int) -> None:
        # loss recovery distorts the epoch's samples; withhold the decision
        self._tainted = True

    def on_rtt_sample(self, role: Subflow, rtt_ns: int, now: int) -> None:
        if self.base_rtt_ns == 0 or rtt_ns < self.base_rtt_ns:
            self.base_rtt_ns = rtt_ns
        qdelay = rtt_ns - self.base_rtt_ns
        self._sum[role] += qdelay
        self._count[role] += 1

    def on_cum_advance(self, cum_by_role: dict, now: int, cwnd: int,
                       in_recovery: bool) -> bool:
        """Check the epoch end markers; returns True when the sender should
        apply the detection window reduction."""
        for role in _ROLES:
            marker = self._markers[role]
            if marker >= 0 and cum_by_role.get(role, -1) < marker:
                return False
        return self._end_epoch(now, cwnd, in_recovery)

    # -- epoch machinery -------------------------------------------------------

    def _end_epoch(self, now: int, cwnd: int, in_recovery: bool) -> bool:
        st = self.state
        cfg = self.config
        dom_sum = self._sum[Subflow.DOMINANT]
        dom_n = self._count[Subflow.DOMINANT]
        non_sum = self._sum[Subflow.NON_DOMINANT]
        non_n = self._count[Subflow.NON_DOMINANT]

        apply_backoff = False
        if self._tainted or in_recovery or dom_n == 0 or non_n == 0:
            decision = None
            avg_dom = dom_sum // dom_n if dom_n else 0
            avg_non = non_sum // non_n if non_n else 0
        else:
            avg_dom = dom_sum // dom_n
            avg_non = non_sum // non_n
            # exact integer comparison: avg_dom - avg_non >= theta
            detected = (dom_sum * non_n - non_sum * dom_n
                        >= cfg.theta_ns * dom_n * non_n)
            decision = detected
            st.decisions_made += 1
            if detected != st.fq_detected:
                st.fq_detected = detected
                st.transitions.append((now, detected))
            if detected and not self._cooldown:
                apply_backoff = self._should_back_off(
                    dom_sum, dom_n, non_sum, non_n, cwnd, now)

        st.epoch_log.append(EpochDecision(now, avg_dom, avg_non, decision))
        st.epochs_completed += 1

        for role in _ROLES:
            self._sum[role] = 0
            self._count[role] = 0
            self._markers[role] = self._highest_sent[role]
        self._tainted = False
        self._cooldown = apply_backoff
        self._epoch_start = now
        return apply_backoff

    def _should_back_off(self, dom_sum: int, dom_n: int, non_sum: int,
                         non_n: int, cwnd: int, now: int) -> bool:
        """Damped window reduction: at most one per epoch, and skipped when
        shrinking the window would visibly collapse the measured delay gap
        below theta (which would only toggle the signal off and force a slow
        rebuild).  The dominant subflow's delivery rate over the epoch gives
        the delay equivalent of the would-be reduction."""
        cfg = self.config
        keep = cfg.backoff.denominator - cfg.backoff.numerator
        den = cfg.backoff.denominator
        reduced = (cwnd * keep + den - 1) // den
        reduction = cwnd - max(reduced, 2 * self.mtu)
        if reduction <= 0:
            return False
        epoch_len = now - self._epoch_start
        if epoch_len <= 0:
            return True
        dom_rate_bps = dom_n * self.mtu * 8 * NS_PER_SEC // epoch_len
        if dom_rate_bps <= 0:
            return True
        drain_ns = reduction * 8 * NS_PER_SEC // dom_rate_bps
        lhs = dom_sum * non_n - non_sum * dom_n - drain_ns * dom_n * non_n
        return lhs >= cfg.theta_ns * dom_n * non_n

    # -- results ----------------------------------------------------------------

    @property
    def fq_detected(self) -> bool:
        return self.state.fq_detected

    @property
    def transitions(self) -> list:
        return self.state.transitions
