"""Configuration selection: candidate enumeration, Pareto frontier, knee
point and the urgency override.

Dominance is (latency down, accuracy up); exact duplicates on both axes
collapse to the earliest-enumerated candidate. The knee is the frontier
point farthest from the chord joining the frontier extremes after min-max
normalizing both axes; urgency (poor tracking retention or a long gap since
the last offload) short-circuits to the fastest frontier point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .estimator import Configuration

DEFAULT_ETA_THRESHOLD = 30  # frames since last offload before panic
DEFAULT_KAPPA_THRESHOLD = 0.7  # tracking retention below which to panic


@dataclass(frozen=True)
class EvaluatedConfig:
    config: Configuration
    latency_hat: float
    accuracy_hat: float

    def __post_init__(self) -> None:
        if self.latency_hat <= 0:
            raise ValueError("latency_hat must be positive")
        if not 0.0 <= self.accuracy_hat <= 1.0:
            raise ValueError("accuracy_hat must be in [0, 1]")


@dataclass(frozen=True)
class RuntimeState:
    eta: int  # frames since the last offloaded frame
    kappa: float  # tracking retention ratio since last reinitialization

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be >= 0")


def enumerate_candidates(
    lambda_set: Sequence[int], beta_set: Sequence[int]
) -> list[Configuration]:
    """Cross product of knobs; beta collapses to 0 when tau_d is 0.

    Order (the enumeration order used for tie-breaks): tau_d ascending,
    then lambda ascending, then beta ascending.
    """
    lambdas = sorted(set(lambda_set))
    betas = sorted(set(beta_set))
    if not lambdas or not betas:
        raise ValueError("lambda_set and beta_set must be non-empty")
    out = [Configuration(0, lam, 0) for lam in lambdas]
    for tau in (1, 2):
        for lam in lambdas:
            for beta in betas:
                out.append(Configuration(tau, lam, beta))
    return out


def pareto_frontier(evaluated: Sequence[EvaluatedConfig]) -> list[EvaluatedConfig]:
    """Non-dominated subset under (minimize latency, maximize accuracy).

    Returned sorted by latency ascending. Exact (latency, accuracy)
    duplicates keep only the first in input order.
    """
    if not evaluated:
        raise ValueError("evaluated configuration list must be non-empty")
    # Sort by latency asc, accuracy desc, input index asc; one sweep keeps
    # points that strictly raise the best accuracy seen so far.
    indexed = sorted(
        range(len(evaluated)),
        key=lambda i: (evaluated[i].latency_hat, -evaluated[i].accuracy_hat, i),
    )
    frontier: list[EvaluatedConfig] = []
    best_acc = float("-inf")
    seen: set[tuple[float, float]] = set()
    for i in indexed:
        point = evaluated[i]
        key = (point.latency_hat, point.accuracy_hat)
        if point.accuracy_hat > best_acc and key not in seen:
            frontier.append(point)
            best_acc = point.accuracy_hat
            seen.add(key)
    return frontier


def knee_point(frontier: Sequence[EvaluatedConfig]) -> EvaluatedConfig:
    """Frontier point with maximum distance to the chord between extremes.

    Both axes are min-max normalized first; ties break toward lower
    latency. Requires at least two points, sorted by latency ascending.
    """
    if len(frontier) < 2:
        raise ValueError("knee point needs a frontier of at least 2 points")
    lats = [p.latency_hat for p in frontier]
    accs = [p.accuracy_hat for p in frontier]
    lat_span = max(lats) - min(lats) or 1.0
    acc_span = max(accs) - min(accs) or 1.0
    pts = [
        ((p.latency_hat - min(lats)) / lat_span, (p.accuracy_hat - min(accs)) / acc_span)
        for p in frontier
    ]
    x0, y0 = pts[0]
    x1, y1 = pts[-1]
    best_idx = 0
    best_dist = -1.0
    for i, (x, y) in enumerate(pts):
        # |cross| is proportional to the perpendicular distance to the chord.
        dist = abs((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0))
        if dist > best_dist:
            best_dist = dist
            best_idx = i
    return frontier[best_idx]


def select_configuration(
    evaluated: Sequence[EvaluatedConfig],
    state: RuntimeState,
    delta_eta: int = DEFAULT_ETA_THRESHOLD,
    delta_kappa: float = DEFAULT_KAPPA_THRESHOLD,
) -> tuple[Configuration, str]:
    """Pick the configuration for the next offload.

    Returns (configuration, branch) where branch is "singleton", "urgent"
    or "knee". Urgency comparisons are strict: kappa < delta_kappa or
    eta > delta_eta.
    """
    frontier = pareto_frontier(evaluated)
    if len(frontier) == 1:
        return frontier[0].config, "singleton"
    if state.kappa < delta_kappa or state.eta > delta_eta:
        return frontier[0].config, "urgent"  # frontier sorted by latency
    return knee_point(frontier).config, "knee"
