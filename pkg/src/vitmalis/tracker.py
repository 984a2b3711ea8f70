"""Constant-velocity multi-object tracker surrogate.

Stands in for optical-flow tracking: remote results re-seed the tracker,
velocities come from IoU-greedy matching between consecutive results (with
a median-shift second pass to absorb camera motion), and predictions advance
boxes linearly. It preserves the quantities the control plane consumes:
tracking retention and staleness error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .grid import GridGeometry
from .scene import Box

MATCH_IOU_THRESHOLD = 0.3
# A track missing from the latest result coasts on its velocity for up to
# this many reinitializations before it is dropped.
MAX_COAST_REINITS = 5
# Coasted tracks older than this many unconfirmed reinits are still used
# for region relevance but are not rendered.
RENDER_MAX_MISSES = 1


def iou(a: Box, b: Box) -> float:
    ax1, ay1 = a.x + a.w, a.y + a.h
    bx1, by1 = b.x + b.w, b.y + b.h
    ox = min(ax1, bx1) - max(a.x, b.x)
    oy = min(ay1, by1) - max(a.y, b.y)
    if ox <= 0 or oy <= 0:
        return 0.0
    inter = ox * oy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


@dataclass
class Track:
    track_id: int
    x: float
    y: float
    w: float
    h: float
    vx: float
    vy: float
    raw_x: float  # anchor: position in the result that created this track
    raw_y: float
    raw_frame: int
    misses: int = 0  # consecutive reinits without a confirming detection

    def box(self) -> Box:
        return Box(self.track_id, self.x, self.y, self.w, self.h)


@dataclass
class TrackerState:
    tracked: dict[int, Track] = field(default_factory=dict)
    reinit_ids: frozenset[int] = frozenset()
    last_reinit_frame: int = -1
    synced_frame: int = 0

    def boxes(self) -> tuple[Box, ...]:
        return tuple(t.box() for t in self.tracked.values())

    def render_boxes(self) -> tuple[Box, ...]:
        return tuple(
            t.box() for t in self.tracked.values() if t.misses <= RENDER_MAX_MISSES
        )


def _fully_outside(t: Track, geom: GridGeometry) -> bool:
    return (
        t.x + t.w <= 0
        or t.y + t.h <= 0
        or t.x >= geom.padded_width_px
        or t.y >= geom.padded_height_px
    )


def tracker_step(state: TrackerState, n_frames: int, geom: GridGeometry) -> tuple[Box, ...]:
    """Advance all tracks by velocity * n_frames and return the live boxes.

    Tracks that leave the frame entirely are dropped and count against the
    retention ratio. n_frames = 0 is the identity.
    """
    if n_frames < 0:
        raise ValueError(f"n_frames must be >= 0, got {n_frames}")
    if n_frames > 0:
        dropped = []
        for tid, t in state.tracked.items():
            t.x += t.vx * n_frames
            t.y += t.vy * n_frames
            if _fully_outside(t, geom):
                dropped.append(tid)
        for tid in dropped:
            del state.tracked[tid]
        state.synced_frame += n_frames
    return state.boxes()


def _greedy_match(
    new_boxes: Sequence[Box], candidates: list[tuple[int, Box]]
) -> dict[int, int]:
    """IoU-greedy one-to-one matching: new index -> candidate list index."""
    pairs = []
    for ni, nb in enumerate(new_boxes):
        for ci, (_, cb) in enumerate(candidates):
            v = iou(nb, cb)
            if v >= MATCH_IOU_THRESHOLD:
                pairs.append((v, ni, ci))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    matched: dict[int, int] = {}
    used_c: set[int] = set()
    for _, ni, ci in pairs:
        if ni in matched or ci in used_c:
            continue
        matched[ni] = ci
        used_c.add(ci)
    return matched


def _median(values: list[float]) -> float:
    if not values:
        return 0.0
    s = sorted(values)
    mid = len(s) // 2
    if len(s) % 2:
        return s[mid]
    return 0.5 * (s[mid - 1] + s[mid])


def tracker_reinit(
    state: TrackerState | None,
    result_boxes: Sequence[Box],
    result_frame_id: int,
    current_frame_id: int,
    geom: GridGeometry,
) -> TrackerState:
    """Reset the tracker to a remote result and catch up to the live frame.

    Velocities are re-estimated by IoU-greedy matching of the new result
    against the previous tracks extrapolated to the result frame; a second
    pass shifted by the median matched displacement recovers matches lost
    to strong camera motion. Unmatched tracks default to the median matched
    velocity (the camera-motion prior), or zero when nothing matched.
    """
    if result_frame_id > current_frame_id:
        raise ValueError("result cannot come from the future")

    prev: list[tuple[Track, Box]] = []
    if state is not None:
        for t in state.tracked.values():
            gap = result_frame_id - t.raw_frame
            prev.append(
                (t, Box(t.track_id, t.raw_x + t.vx * gap, t.raw_y + t.vy * gap, t.w, t.h))
            )

    candidates = [(i, pb) for i, (_, pb) in enumerate(prev)]
    matched = _greedy_match(result_boxes, candidates)

    # Second pass: shift remaining candidates by the median residual of the
    # matched pairs (camera-motion compensation) and match again.
    if matched and len(matched) < len(result_boxes):
        dxs = [result_boxes[ni].x - prev[ci][1].x for ni, ci in matched.items()]
        dys = [result_boxes[ni].y - prev[ci][1].y for ni, ci in matched.items()]
        sx, sy = _median(dxs), _median(dys)
        rest_new = [ni for ni in range(len(result_boxes)) if ni not in matched]
        rest_c = [
            (ci, Box(pb.object_id, pb.x + sx, pb.y + sy, pb.w, pb.h))
            for ci, (_, pb) in enumerate(prev)
            if ci not in matched.values()
        ]
        extra = _greedy_match([result_boxes[ni] for ni in rest_new], rest_c)
        for local_ni, local_ci in extra.items():
            matched[rest_new[local_ni]] = rest_c[local_ci][0]

    velocities: list[tuple[float, float]] = []
    for ni, ci in matched.items():
        t = prev[ci][0]
        gap = result_frame_id - t.raw_frame
        if gap > 0:
            velocities.append(
                (
                    (result_boxes[ni].x - t.raw_x) / gap,
                    (result_boxes[ni].y - t.raw_y) / gap,
                )
            )
    default_v = (
        (_median([v[0] for v in velocities]), _median([v[1] for v in velocities]))
        if velocities
        else (0.0, 0.0)
    )

    catchup = current_frame_id - result_frame_id
    new_state = TrackerState(
        tracked={},
        reinit_ids=frozenset(),
        last_reinit_frame=current_frame_id,
        synced_frame=current_frame_id,
    )
    for ni, box in enumerate(result_boxes):
        if ni in matched:
            t_prev = prev[matched[ni]][0]
            gap = result_frame_id - t_prev.raw_frame
            if gap > 0:
                vx = (box.x - t_prev.raw_x) / gap
                vy = (box.y - t_prev.raw_y) / gap
            else:
                vx, vy = t_prev.vx, t_prev.vy
        else:
            vx, vy = default_v
        t = Track(
            track_id=box.object_id,
            x=box.x + vx * catchup,
            y=box.y + vy * catchup,
            w=box.w,
            h=box.h,
            vx=vx,
            vy=vy,
            raw_x=box.x,
            raw_y=box.y,
            raw_frame=result_frame_id,
        )
        if not _fully_outside(t, geom):
            new_state.tracked[t.track_id] = t

    # Tracks the result did not confirm coast on their velocity for a
    # bounded number of reinits (transient misses should not be permanent).
    confirmed = {prev[ci][0].track_id for ci in matched.values()}
    for t_old in (state.tracked.values() if state is not None else ()):
        if t_old.track_id in confirmed or t_old.track_id in new_state.tracked:
            continue
        if t_old.misses + 1 > MAX_COAST_REINITS:
            continue
        dt = current_frame_id - t_old.raw_frame
        t = Track(
            track_id=t_old.track_id,
            x=t_old.raw_x + t_old.vx * dt,
            y=t_old.raw_y + t_old.vy * dt,
            w=t_old.w,
            h=t_old.h,
            vx=t_old.vx,
            vy=t_old.vy,
            raw_x=t_old.raw_x,
            raw_y=t_old.raw_y,
            raw_frame=t_old.raw_frame,
            misses=t_old.misses + 1,
        )
        if not _fully_outside(t, geom):
            new_state.tracked[t.track_id] = t
    new_state.reinit_ids = frozenset(new_state.tracked)
    return new_state


def compute_kappa(state: TrackerState | None) -> float:
    """Share of reinit-time objects still tracked; 1.0 when vacuous."""
    if state is None or not state.reinit_ids:
        return 1.0
    still = sum(1 for tid in state.reinit_ids if tid in state.tracked)
    return still / len(state.reinit_ids)
