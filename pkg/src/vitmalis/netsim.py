"""Trace-driven uplink model: piecewise-exact throughput integration and RTT.

Traces hold one (throughput, RTT) sample per second and wrap around when a
run outlives them. Transmission completion is solved exactly across second
boundaries; all time is simulated milliseconds, never wall clock.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

TRACE_HEADER = ["t_sec", "throughput_mbps", "rtt_ms"]

# AR(1) parameters for the bundled synthetic trace generator. Mean ranges
# follow the public 4G/5G corpora the simulator stands in for.
_TRACE_KINDS = {
    "4g": {"mean_range": (10.4, 36.4), "rtt_base": 39.0, "rel_sigma": 0.30, "dip_prob": 0.06},
    "5g": {"mean_range": (12.2, 135.5), "rtt_base": 34.0, "rel_sigma": 0.35, "dip_prob": 0.02},
}


class TraceParseError(ValueError):
    """Malformed trace file; carries the 1-based offending row number."""

    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class NetworkTrace:
    seconds: tuple[tuple[float, float], ...]  # (throughput_mbps, rtt_ms) per second
    duration_s: int
    label: str = "custom"

    def __post_init__(self) -> None:
        if self.duration_s < 1 or len(self.seconds) != self.duration_s:
            raise ValueError("trace must hold exactly duration_s >= 1 samples")
        for i, (thr, rtt) in enumerate(self.seconds):
            if thr <= 0:
                raise ValueError(f"second {i}: throughput must be positive, got {thr}")
            if rtt < 0:
                raise ValueError(f"second {i}: rtt must be non-negative, got {rtt}")

    def throughput_at(self, t_ms: float) -> float:
        return self.seconds[int(t_ms // 1000.0) % self.duration_s][0]


def load_trace(path: str, label: str = "custom") -> NetworkTrace:
    """Parse a trace CSV with header t_sec,throughput_mbps,rtt_ms."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_trace(fh.read(), label=label)


def parse_trace(text: str, label: str = "custom") -> NetworkTrace:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceParseError("empty file", row=1) from None
    if [h.strip() for h in header] != TRACE_HEADER:
        raise TraceParseError(
            f"expected header {','.join(TRACE_HEADER)!r}, got {','.join(header)!r}", row=1
        )
    seconds: list[tuple[float, float]] = []
    for idx, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise TraceParseError(f"expected 3 fields, got {len(row)}", row=idx)
        try:
            t_sec, thr, rtt = int(row[0]), float(row[1]), float(row[2])
        except ValueError as exc:
            raise TraceParseError(str(exc), row=idx) from None
        if t_sec != len(seconds):
            raise TraceParseError(f"t_sec {t_sec} out of order (expected {len(seconds)})", row=idx)
        if thr <= 0:
            raise TraceParseError(f"throughput must be positive, got {thr}", row=idx)
        if rtt < 0:
            raise TraceParseError(f"rtt must be non-negative, got {rtt}", row=idx)
        seconds.append((thr, rtt))
    if not seconds:
        raise TraceParseError("trace has no samples", row=2)
    return NetworkTrace(seconds=tuple(seconds), duration_s=len(seconds), label=label)


def save_trace(trace: NetworkTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for t, (thr, rtt) in enumerate(trace.seconds):
            writer.writerow([t, repr(thr), repr(rtt)])


def transmit(trace: NetworkTrace, payload_bytes: float, start_ms: float) -> float:
    """Completion time of an upload started at ``start_ms``.

    Returns the earliest t such that the throughput integral from start_ms
    to t covers payload_bytes * 8 bits. Piecewise-exact across second
    boundaries; the wrap-around trace keeps completion finite.
    """
    if payload_bytes <= 0:
        raise ValueError(f"payload_bytes must be positive, got {payload_bytes}")
    if start_ms < 0:
        raise ValueError(f"start_ms must be non-negative, got {start_ms}")
    remaining_bits = payload_bytes * 8.0
    t = start_ms
    while True:
        sec = int(t // 1000.0)
        rate_bits_per_ms = trace.seconds[sec % trace.duration_s][0] * 1000.0
        boundary = (sec + 1) * 1000.0
        capacity = (boundary - t) * rate_bits_per_ms
        if remaining_bits <= capacity:
            return t + remaining_bits / rate_bits_per_ms
        remaining_bits -= capacity
        t = boundary


def rtt_at(trace: NetworkTrace, t_ms: float) -> float:
    """RTT of the second containing ``t_ms`` (wrapped past the trace end)."""
    if t_ms < 0:
        raise ValueError(f"t_ms must be non-negative, got {t_ms}")
    return trace.seconds[int(t_ms // 1000.0) % trace.duration_s][1]


def generate_trace(kind: str, seed: int, duration_s: int = 300) -> NetworkTrace:
    """Bundled synthetic trace generator for 4G-like and 5G-like uplinks.

    AR(1) process around a per-trace mean drawn from the kind's range, with
    occasional deep dips; RTT wanders around the kind's base latency.
    """
    key = kind.lower()
    if key not in _TRACE_KINDS:
        raise ValueError(f"kind must be one of {sorted(_TRACE_KINDS)}, got {kind!r}")
    params = _TRACE_KINDS[key]
    kind_tag = {"4g": 0x46, "5g": 0x56}[key]
    rng = np.random.Generator(np.random.Philox(key=[seed, kind_tag]))
    mean = rng.uniform(*params["mean_range"])
    sigma = params["rel_sigma"] * mean
    phi = 0.85
    x = mean
    rtt = params["rtt_base"]
    dip_left = 0
    dip_factor = 1.0
    seconds = []
    for _ in range(duration_s):
        x = mean + phi * (x - mean) + sigma * np.sqrt(1 - phi * phi) * rng.normal()
        if dip_left > 0:
            dip_left -= 1
        elif rng.random() < params["dip_prob"]:
            # Outage-like episode lasting a few seconds.
            dip_left = int(rng.integers(3, 9))
            dip_factor = rng.uniform(0.05, 0.25)
        thr = max(0.8, float(x * (dip_factor if dip_left > 0 else 1.0)))
        rtt = params["rtt_base"] + 0.7 * (rtt - params["rtt_base"]) + rng.normal() * 2.0
        seconds.append((thr, max(5.0, float(rtt))))
    return NetworkTrace(seconds=tuple(seconds), duration_s=duration_s, label=key.upper())
