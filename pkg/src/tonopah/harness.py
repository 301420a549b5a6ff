"""Scenario construction, the evaluation protocol and its metrics.

A scenario is one 90 s bulk transfer over a dumbbell bottleneck with a
configurable qdisc, optionally sharing the link with a NewReno cross flow
that gets a head start.  Grids sweep base delay x link rate with several
repetitions per cell and aggregate time-weighted detection accuracy,
utilization and queuing delay.
"""

import hashlib
import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .detector import FairQueuingDetector, TonopahConfig
from .engine import Simulator
from .link import DelayPath, Link
from .packet import Subflow
from .qdisc import QdiscConfig, QdiscKind, build_qdisc
from .simtime import (MTU_BYTES, NS_PER_MS, NS_PER_SEC, mbps_to_bps, ms_to_ns,
                      sec_to_ns)
from .stats import ecdf, welch_t_test
from .transport import NewRenoSender, Receiver

MIN_BUFFER_PACKETS = 100
START_JITTER_MAX_NS = 2 * NS_PER_MS   # seed-derived flow start offset

QDISC_BY_NAME = {
    "pfifo": QdiscKind.DROP_TAIL,
    "fq": QdiscKind.FQ_DRR,
    "fq_codel": QdiscKind.FQ_CODEL,
}


@dataclass(frozen=True)
class ScenarioSpec:
    qdisc: str = "fq"
    rate_mbps: float = 50.0
    delay_ms: float = 50.0          # base round-trip delay, split per direction
    duration_s: float = 90.0
    cross_traffic: bool = False
    head_start_s: float = 4.0       # cross flow lead time
    tonopah_enabled: bool = True
    theta_ms: float = 5.0
    dominant_share: str = "2/3"
    backoff: str = "1/8"
    seed: int = 1

    def __post_init__(self) -> None:
        if self.qdisc not in QDISC_BY_NAME:
            raise ValueError(f"unknown qdisc {self.qdisc!r}")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if self.cross_traffic and self.head_start_s >= self.duration_s:
            raise ValueError("head start must be shorter than the run")

    @property
    def ground_truth_fq(self) -> bool:
        return self.qdisc != "pfifo"

    def tonopah_config(self) -> TonopahConfig:
        return TonopahConfig(dominant_share=Fraction(self.dominant_share),
                             theta_ns=ms_to_ns(self.theta_ms),
                             backoff=Fraction(self.backoff))

    def to_dict(self) -> dict:
        return {
            "qdisc": self.qdisc,
            "rate_mbps": self.rate_mbps,
            "delay_ms": self.delay_ms,
            "duration_s": self.duration_s,
            "cross_traffic": self.cross_traffic,
            "head_start_s": self.head_start_s,
            "tonopah_enabled": self.tonopah_enabled,
            "theta_ms": self.theta_ms,
            "dominant_share": self.dominant_share,
            "backoff": self.backoff,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        return cls(**data)


def buffer_size(rate_bps: int, rtt_ns: int) -> int:
    """Bottleneck buffer in packets: the bandwidth-delay product, floored at
    100 packets.  Applied to the whole queue for pfifo and per flow for fq;
    fq_codel keeps its own default limit."""
    if rate_bps <= 0 or rtt_ns <= 0:
        raise ValueError("rate and rtt must be positive")
    bdp_bits = rate_bps * rtt_ns               # bit-nanoseconds
    per_packet = 8 * MTU_BYTES * NS_PER_SEC
    packets = (bdp_bits + per_packet - 1) // per_packet
    return max(packets, MIN_BUFFER_PACKETS)


def detection_accuracy(transitions, ground_truth: bool, duration_ns: int) -> float:
    """Time-weighted fraction of [0, duration) where the signal (initially
    False, toggling at each transition) matches the ground truth."""
    if duration_ns <= 0:
        raise ValueError("duration must be positive")
    matched = 0
    state = False
    prev = 0
    for at, value in transitions:
        at = min(max(at, 0), duration_ns)
        if at < prev:
            raise ValueError("transitions must be sorted by time")
        if state == ground_truth:
            matched += at - prev
        prev = at
        state = value
    if state == ground_truth:
        matched += duration_ns - prev
    return matched / duration_ns


@dataclass
class RunResult:
    spec: ScenarioSpec
    accuracy: float
    utilization: float
    mean_qdelay_ns: float
    drops: int
    retransmits: int
    delivered_payload_bytes: int
    detection_transitions: list          # (ns since flow start, bool)
    epoch_log: list                      # (ns, avg_dom_ns, avg_non_ns, code)
    flow_counters: dict
    detection_backoffs: int = 0

    @property
    def mean_qdelay_ms(self) -> float:
        return self.mean_qdelay_ns / NS_PER_MS

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "accuracy": self.accuracy,
            "utilization": self.utilization,
            "mean_qdelay_ns": self.mean_qdelay_ns,
            "drops": self.drops,
            "retransmits": self.retransmits,
            "delivered_payload_bytes": self.delivered_payload_bytes,
            "detection_transitions": [[t, v] for t, v in self.detection_transitions],
            "detection_backoffs": self.detection_backoffs,
            "flow_counters": self.flow_counters,
        }

    def digest(self) -> str:
        payload = dict(self.to_dict(), epoch_log=self.epoch_log)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def run_scenario(spec: ScenarioSpec) -> RunResult:
    sim = Simulator()
    rate_bps = mbps_to_bps(spec.rate_mbps)
    rtt_ns = ms_to_ns(spec.delay_ms)
    one_way_ns = rtt_ns // 2
    qcfg = QdiscConfig(kind=QDISC_BY_NAME[spec.qdisc],
                       buffer_packets=buffer_size(rate_bps, rtt_ns),
                       codel_target_ns=5 * NS_PER_MS,
                       codel_interval_ns=100 * NS_PER_MS)
    forward = Link(sim, rate_bps, one_way_ns, build_qdisc(qcfg))
    reverse = DelayPath(sim, one_way_ns)

    # the seed perturbs the measured flow's start instant, which is what
    # distinguishes repetitions of an otherwise deterministic system
    jitter = random.Random(spec.seed).randrange(0, START_JITTER_MAX_NS)
    head_start_ns = sec_to_ns(spec.head_start_s) if spec.cross_traffic else 0
    flow_start = head_start_ns + jitter
    duration_ns = sec_to_ns(spec.duration_s)
    end = flow_start + duration_ns

    detector = None
    roles: tuple[Subflow, ...] = (Subflow.NONE,)
    dominant_share = Fraction(spec.dominant_share)
    if spec.tonopah_enabled:
        detector = FairQueuingDetector(spec.tonopah_config())
        roles = (Subflow.DOMINANT, Subflow.NON_DOMINANT)

    main = NewRenoSender(sim, forward, 0, roles, dominant_share=dominant_share,
                         detector=detector, start_at=flow_start)
    forward.attach_receiver(0, Receiver(sim, reverse, 0))
    reverse.attach_receiver(0, main)
    if spec.cross_traffic:
        cross = NewRenoSender(sim, forward, 1, (Subflow.NONE,), start_at=0)
        forward.attach_receiver(1, Receiver(sim, reverse, 1))
        reverse.attach_receiver(1, cross)

    stats = sim.run_until(end)

    if detector is not None:
        transitions = [(t - flow_start, v) for t, v in detector.transitions]
        epoch_log = [(d.at_ns - flow_start, d.avg_dominant_ns, d.avg_nondominant_ns,
                      -1 if d.detected is None else int(d.detected))
                     for d in detector.state.epoch_log]
        backoffs = main.detection_backoffs
    else:
        transitions, epoch_log, backoffs = [], [], 0

    accuracy = detection_accuracy(transitions, spec.ground_truth_fq, duration_ns)
    delivered = sum(fc.delivered_payload_bytes for fc in stats.flows.values())
    utilization = delivered * 8 * NS_PER_SEC / (rate_bps * end)
    flow_counters = {
        fid: {"sent": fc.sent, "delivered": fc.delivered, "dropped": fc.dropped,
              "retransmits": fc.retransmits,
              "delivered_payload_bytes": fc.delivered_payload_bytes}
        for fid, fc in sorted(stats.flows.items())
    }
    return RunResult(
        spec=spec,
        accuracy=accuracy,
        utilization=utilization,
        mean_qdelay_ns=stats.mean_sojourn_ns,
        drops=sum(fc.dropped for fc in stats.flows.values()),
        retransmits=sum(fc.retransmits for fc in stats.flows.values()),
        delivered_payload_bytes=delivered,
        detection_transitions=transitions,
        epoch_log=epoch_log,
        flow_counters=flow_counters,
        detection_backoffs=backoffs,
    )


def derive_seed(base_seed: int, delay_ms: float, rate_mbps: float, rep: int) -> int:
    """Stable per-cell seed so any single cell is reproducible in isolation."""
    key = f"{base_seed}|{delay_ms:g}|{rate_mbps:g}|{rep}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


@dataclass
class GridResult:
    cells: dict = field(default_factory=dict)    # (delay_ms, rate_mbps) -> [RunResult]
    errors: dict = field(default_factory=dict)   # (delay_ms, rate_mbps, rep) -> str

    def runs(self) -> list:
        out = []
        for key in sorted(self.cells):
            out.extend(self.cells[key])
        return out

    @property
    def accuracy_samples(self) -> list[float]:
        return [r.accuracy for r in self.runs()]

    @property
    def overall_accuracy(self) -> float:
        samples = self.accuracy_samples
        if not samples:
            raise ValueError("grid produced no successful runs")
        return sum(samples) / len(samples)

    def accuracy_ecdf(self) -> list[tuple[float, float]]:
        return ecdf(self.accuracy_samples)

    def cell_means(self, metric) -> dict:
        return {key: sum(metric(r) for r in runs) / len(runs)
                for key, runs in sorted(self.cells.items())}


def _run_cell(args):
    delay_ms, rate_mbps, rep, spec = args
    try:
        return (delay_ms, rate_mbps, rep, run_scenario(spec), None)
    except Exception as exc:  # surfaced per cell, excluded from aggregates
        return (delay_ms, rate_mbps, rep, None, f"{type(exc).__name__}: {exc}")


def run_grid(base: ScenarioSpec, delays_ms, rates_mbps, reps: int,
             workers: int | None = None) -> GridResult:
    if reps < 1 or not delays_ms or not rates_mbps:
        raise ValueError("grid needs non-empty axes and reps >= 1")
    jobs = []
    for delay in delays_ms:
        for rate in rates_mbps:
            for rep in range(reps):
                spec = replace(base, delay_ms=delay, rate_mbps=rate,
                               seed=derive_seed(base.seed, delay, rate, rep))
                jobs.append((delay, rate, rep, spec))

    result = GridResult()
    if workers is not None and workers <= 1:
        outcomes = map(_run_cell, jobs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs, chunksize=1))
    for delay, rate, rep, run, error in outcomes:
        if error is not None:
            result.errors[(delay, rate, rep)] = error
        else:
            result.cells.setdefault((delay, rate), []).append(run)
    return result


def compare_cc(base: ScenarioSpec, delays_ms, rates_mbps, reps: int,
               workers: int | None = None) -> dict:
    """Run the grid with the detector off (plain NewReno) and on, and compare
    utilization and queuing delay; Welch's t-test on the per-run delays."""
    plain = run_grid(replace(base, tonopah_enabled=False),
                     delays_ms, rates_mbps, reps, workers)
    tono = run_grid(replace(base, tonopah_enabled=True),
                    delays_ms, rates_mbps, reps, workers)
    qd_plain = [r.mean_qdelay_ms for r in plain.runs()]
    qd_tono = [r.mean_qdelay_ms for r in tono.runs()]
    welch = welch_t_test(qd_plain, qd_tono)
    summary = {
        "newreno": {
            "utilization": sum(r.utilization for r in plain.runs()) / len(plain.runs()),
            "mean_qdelay_ms": sum(qd_plain) / len(qd_plain),
        },
        "tonopah": {
            "utilization": sum(r.utilization for r in tono.runs()) / len(tono.runs()),
            "mean_qdelay_ms": sum(qd_tono) / len(qd_tono),
        },
        "welch": {"t": welch.t, "df": welch.df, "p": welch.p},
    }
    return {"summary": summary, "plain_grid": plain, "tonopah_grid": tono}
