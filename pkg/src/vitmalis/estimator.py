"""Performance estimation: delay composition, learned size/accuracy models
and short-window network estimates.

The end-to-end latency estimate is the sum of five terms: profiled encode
delay, transmission (predicted size over predicted throughput), mean decode
delay, the per-restoration-point linear inference model, and the round-trip
time. Sizes are KiB (1024 bytes), throughput is Mbps (10^6 bits/s).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mlp import MlpModel, forward_batch, mlp_forward

# Bootstrap network estimate used before the first offload completes.
DEFAULT_PRIOR_THROUGHPUT_MBPS = 20.0
DEFAULT_PRIOR_RTT_MS = 40.0

# Milliseconds to move 1 KiB at 1 Mbps: 1024 * 8 bits / 10^6 bits/s * 1000.
MS_PER_KIB_PER_MBPS = 8.192

VALID_LAMBDAS = (70, 75, 80, 85, 90, 95, 100)

# Feature layouts of the two learned models. Order is part of the model
# contract and must match training exactly.
SIZE_FEATURES = ("tau_d", "n_d", "m_d", "m_f", "lambda")
ACC_FEATURES = ("tau_d", "lambda", "beta", "n_d", "m_d", "m_f", "mean_rho", "std_rho")


class UnsupportedConfigError(LookupError):
    """A configuration falls outside the profiled tables."""


@dataclass(frozen=True)
class Configuration:
    """One point of the offload decision space: (tau_d, lambda, beta)."""

    tau_d: int
    lambda_q: int
    beta: int

    def __post_init__(self) -> None:
        if self.tau_d not in (0, 1, 2):
            raise ValueError(f"tau_d must be 0, 1 or 2, got {self.tau_d}")
        if not 1 <= self.lambda_q <= 100:
            raise ValueError(f"lambda_q must be in [1, 100], got {self.lambda_q}")
        if not 0 <= self.beta <= 4:
            raise ValueError(f"beta must be in [0, 4], got {self.beta}")
        if self.tau_d == 0 and self.beta != 0:
            raise ValueError("beta is fixed to 0 when tau_d is 0")


@dataclass(frozen=True)
class EncodeProfile:
    """Profiled encode delays, bucketed by downsampled-region count."""

    table: dict[tuple[int, int], float]  # (n_d bucket, lambda) -> mean ms
    dec_mean_ms: float
    bucket_step: int = 2

    def __post_init__(self) -> None:
        if not self.table:
            raise UnsupportedConfigError("encode profile is empty")
        object.__setattr__(self, "_buckets", sorted({b for b, _ in self.table}))

    def lookup(self, n_d: int, lambda_q: int) -> float:
        bucket = self.bucket_step * round(n_d / self.bucket_step)
        bucket = min(self._buckets, key=lambda b: (abs(b - bucket), b))
        key = (bucket, lambda_q)
        if key not in self.table:
            raise UnsupportedConfigError(
                f"no encode profile entry for N_d bucket {bucket}, lambda {lambda_q}"
            )
        return self.table[key]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["n_d", "lambda", "enc_ms"])
        for (n_d, lam) in sorted(self.table):
            writer.writerow([n_d, lam, repr(self.table[(n_d, lam)])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dec_mean_ms: float, bucket_step: int = 2) -> "EncodeProfile":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if [h.strip() for h in header] != ["n_d", "lambda", "enc_ms"]:
            raise ValueError(f"bad encode profile header: {header}")
        table = {}
        for row in reader:
            if not row:
                continue
            table[(int(row[0]), int(row[1]))] = float(row[2])
        return cls(table=table, dec_mean_ms=dec_mean_ms, bucket_step=bucket_step)


@dataclass(frozen=True)
class InferenceDelayModels:
    """Per-restoration-point linear delay models: a_beta + b_beta * N_d."""

    intercepts: tuple[float, ...]
    slopes: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.intercepts) != len(self.slopes):
            raise ValueError("intercepts and slopes must have equal length")
        if any(a <= 0 for a in self.intercepts):
            raise ValueError("intercepts must be positive")
        if any(b > 0 for b in self.slopes):
            raise ValueError("slopes must be <= 0")

    def estimate(self, beta: int, n_d: int) -> float:
        return self.intercepts[beta] + self.slopes[beta] * n_d


@dataclass(frozen=True)
class NetEstimate:
    throughput_hat: float  # Mbps
    rtt_hat: float  # ms

    def __post_init__(self) -> None:
        if self.throughput_hat <= 0 or self.rtt_hat <= 0:
            raise ValueError("network estimates must be positive")


def update_net_estimate(
    history: Sequence[tuple[float, float]],
    prior: NetEstimate | None = None,
) -> NetEstimate:
    """Average the two most recent (throughput, rtt) observations.

    With no history yet, returns the configured prior.
    """
    if prior is None:
        prior = NetEstimate(DEFAULT_PRIOR_THROUGHPUT_MBPS, DEFAULT_PRIOR_RTT_MS)
    if not history:
        return prior
    recent = list(history)[-2:]
    thr = sum(s[0] for s in recent) / len(recent)
    rtt = sum(s[1] for s in recent) / len(recent)
    return NetEstimate(throughput_hat=thr, rtt_hat=rtt)


def size_features(c: Configuration, n_d: int, m_d: float, m_f: float) -> np.ndarray:
    return np.array([c.tau_d, n_d, m_d, m_f, c.lambda_q], dtype=np.float64)


def accuracy_features(
    c: Configuration, n_d: int, m_d: float, m_f: float, mean_rho: float, std_rho: float
) -> np.ndarray:
    return np.array(
        [c.tau_d, c.lambda_q, c.beta, n_d, m_d, m_f, mean_rho, std_rho], dtype=np.float64
    )


def estimate_size(
    size_model: MlpModel, c: Configuration, n_d: int, m_d: float, m_f: float
) -> float:
    """Predicted payload size in KiB, clamped below at 1 KiB."""
    if c.tau_d == 0 and n_d != 0:
        raise ValueError("tau_d=0 implies N_d=0")
    return max(1.0, mlp_forward(size_model, size_features(c, n_d, m_d, m_f)))


def estimate_accuracy(
    acc_model: MlpModel,
    c: Configuration,
    n_d: int,
    m_d: float,
    m_f: float,
    mean_rho: float,
    std_rho: float,
) -> float:
    """Predicted inference F1, clamped to [0, 1]."""
    raw = mlp_forward(acc_model, accuracy_features(c, n_d, m_d, m_f, mean_rho, std_rho))
    return min(1.0, max(0.0, raw))


def predict_size_batch(model, features: np.ndarray) -> np.ndarray:
    """Batched size predictions (KiB, clamped at 1); accepts any model that
    is either an MlpModel or exposes predict_size_batch."""
    if isinstance(model, MlpModel):
        out = forward_batch(model, features)
    else:
        out = np.asarray(model.predict_size_batch(features), dtype=np.float64)
    return np.maximum(out, 1.0)


def predict_accuracy_batch(model, features: np.ndarray) -> np.ndarray:
    """Batched accuracy predictions, clamped to [0, 1]."""
    if isinstance(model, MlpModel):
        out = forward_batch(model, features)
    else:
        out = np.asarray(model.predict_accuracy_batch(features), dtype=np.float64)
    return np.clip(out, 0.0, 1.0)


@dataclass
class EstimatorBundle:
    """Everything the offload optimizer needs at runtime."""

    size_model: object  # MlpModel, or a stand-in with predict_size_batch
    acc_model: object
    encode_profile: EncodeProfile
    inference_models: InferenceDelayModels


def transmission_ms(size_kib: float, throughput_mbps: float) -> float:
    return size_kib * MS_PER_KIB_PER_MBPS / throughput_mbps


def estimate_latency(
    profile: EncodeProfile,
    inf: InferenceDelayModels,
    net: NetEstimate,
    c: Configuration,
    n_d: int,
    size_hat_kib: float,
) -> float:
    """End-to-end latency estimate: enc + transmission + dec + inference + rtt."""
    enc = profile.lookup(n_d, c.lambda_q)
    tx = transmission_ms(size_hat_kib, net.throughput_hat)
    dec = profile.dec_mean_ms
    inf_ms = inf.estimate(c.beta, n_d)
    return enc + tx + dec + inf_ms + net.rtt_hat
