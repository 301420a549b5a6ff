"""Tonopah: continuous fair-queuing detection on a packet-level simulator."""

__version__ = "0.1.0"

from .detector import FairQueuingDetector, TonopahConfig
from .engine import SimulationError, Simulator
from .harness import (GridResult, RunResult, ScenarioSpec, buffer_size,
                      compare_cc, detection_accuracy, run_grid, run_scenario)
from .packet import Packet, Subflow
from .qdisc import QdiscConfig, QdiscKind
from .stats import StatsError, WelchResult, ecdf, welch_t_test
from .transport import NewRenoSender, Receiver, RttEstimator

__all__ = [
    "FairQueuingDetector", "TonopahConfig",
    "SimulationError", "Simulator",
    "GridResult", "RunResult", "ScenarioSpec", "buffer_size", "compare_cc",
    "detection_accuracy", "run_grid", "run_scenario",
    "Packet", "Subflow",
    "QdiscConfig", "QdiscKind",
    "StatsError", "WelchResult", "ecdf", "welch_t_test",
    "NewRenoSender", "Receiver", "RttEstimator",
    "__version__",
]
