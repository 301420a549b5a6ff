"""Integer-nanosecond clock arithmetic.

All simulator time is kept in integer nanoseconds and all rates in integer
bits per second, so every run is exactly reproducible: there is no float
rounding anywhere on the packet path.
"""

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_SEC = 1_000_000_000

MTU_BYTES = 1500
ACK_BYTES = 40


def ms_to_ns(value: float) -> int:
    """Milliseconds to integer nanoseconds (round half up on fractions)."""
    return int(round(value * NS_PER_MS))


def sec_to_ns(value: float) -> int:
    return int(round(value * NS_PER_SEC))


def ns_to_ms(value: int) -> float:
    return value / NS_PER_MS


def ns_to_sec(value: int) -> float:
    return value / NS_PER_SEC


def mbps_to_bps(value: float) -> int:
    return int(round(value * 1_000_000))


def serialization_ns(size_bytes: int, rate_bps: int) -> int:
    """Wire time of a packet at a given rate, rounded up to whole ns.

    Rounding up keeps the link model conservative: a packet never finishes
    serializing earlier than the exact rational value.
    """
    if rate_bps <= 0:
        raise ValueError("rate must be positive")
    bits = size_bytes * 8
    return (bits * NS_PER_SEC + rate_bps - 1) // rate_bps
