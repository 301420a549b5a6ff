"""The packet objects moved through links and queues."""

from dataclasses import dataclass
from enum import IntEnum


class Subflow(IntEnum):
    """Role of a packet within its flow.

    Plain flows send everything as NONE.  A split flow tags each data packet
    DOMINANT or NON_DOMINANT; the bottleneck's flow classifier treats the two
    roles as distinct flows (in deployment they would be distinct 5-tuples).
    """

    NONE = 0
    DOMINANT = 1
    NON_DOMINANT = 2


@dataclass(slots=True)
class Packet:
    flow_id: int
    subflow: Subflow
    seq: int
    size_bytes: int
    sent_at: int
    txn: int = -1                  # per-subflow transmission number of this copy
    is_ack: bool = False
    retransmission: bool = False
    # ack payload (valid when is_ack):
    acked_seq: int = -1
    acked_subflow: Subflow = Subflow.NONE
    acked_txn: int = -1            # highest transmission number seen on the subflow
    echo_txn: int = -1             # transmission number of the copy acked here
    echo_sent_at: int = 0
    echo_retransmit: bool = False

    def __post_init__(self) -> None:
        if self.size_bytes <= 0:
            raise ValueError("packet size must be positive")
