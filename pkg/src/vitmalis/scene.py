"""Deterministic synthetic world standing in for the camera feed.

Objects follow linear trajectories on top of a piecewise-constant camera
pan; cluttered scenery turns pan into per-region foreground counts (the
signal a background-subtraction stage would produce), and object interiors
produce foreground regardless of pan. No pixels are rendered: the world
emits ground-truth boxes and analytic foreground counts only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .grid import GridGeometry

# Fraction of a box interior counted as moving foreground.
OBJECT_FG_FILL = 0.85
# Foreground fraction of a region per px/frame of pan, at clutter strength 1.
PAN_FG_COEFF = 0.02
# Cap on the foreground fraction of any single region.
REGION_FG_CAP = 0.98
# Pan schedule segment length bounds, frames.
PAN_SEGMENT_FRAMES = (60, 120)


class Box(NamedTuple):
    object_id: int
    x: float
    y: float
    w: float
    h: float


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    duration_frames: int
    fps: float = 30.0
    object_count: int = 6
    object_speed_range: tuple[float, float] = (0.5, 3.0)
    object_size_range: tuple[float, float] = (40.0, 120.0)
    camera_pan: float = 2.0
    spawn_despawn_rate: float = 0.02
    clutter_density: float = 0.3
    turn_rate: float = 0.01
    scene_id: str = "custom"

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.duration_frames < 1:
            raise ValueError("duration_frames must be >= 1")
        for name in ("object_speed_range", "object_size_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a non-negative (lo, hi) pair")
        if self.camera_pan < 0:
            raise ValueError("camera_pan must be non-negative")
        if not 0.0 <= self.spawn_despawn_rate <= 1.0:
            raise ValueError("spawn_despawn_rate must be in [0, 1]")
        if not 0.0 <= self.clutter_density <= 1.0:
            raise ValueError("clutter_density must be in [0, 1]")
        if not 0.0 <= self.turn_rate <= 1.0:
            raise ValueError("turn_rate must be in [0, 1]")


@dataclass(frozen=True)
class FrameTruth:
    """Ground truth for one frame: boxes plus per-region foreground counts."""

    frame_id: int
    boxes: tuple[Box, ...]
    foreground_px: tuple[float, ...]
    total_fg_px: float


@dataclass(frozen=True)
class Segment:
    """One constant-velocity leg of a trajectory, anchored at start_frame."""

    start_frame: int
    x: float
    y: float
    vx: float
    vy: float


@dataclass(frozen=True)
class ObjectTrack:
    """Closed-form record of one object's lifetime.

    Within the segment active at frame t, position is
    segment_pos + velocity * (t - segment_start) + cumpan[t] - cumpan[start].
    Turn events start a new segment; velocity is constant in between.
    """

    object_id: int
    spawn_frame: int
    despawn_frame: int  # exclusive; == duration if never despawned
    w: float
    h: float
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class SceneWorld:
    """Everything needed to derive per-frame truth in closed form."""

    config: SceneConfig
    geometry: GridGeometry
    tracks: tuple[ObjectTrack, ...]
    pan_x: tuple[float, ...]  # shift applied between frame t-1 and t
    pan_y: tuple[float, ...]
    cum_pan_x: tuple[float, ...]  # inclusive prefix sums of the shifts
    cum_pan_y: tuple[float, ...]
    clutter_strength: tuple[float, ...]  # per region, pan-to-foreground gain

    def position_at(self, track: ObjectTrack, frame: int) -> tuple[float, float]:
        if not track.spawn_frame <= frame < track.despawn_frame:
            raise ValueError(f"object {track.object_id} not alive at frame {frame}")
        seg = track.segments[0]
        for cand in track.segments[1:]:
            if cand.start_frame > frame:
                break
            seg = cand
        dt = frame - seg.start_frame
        cpx = self.cum_pan_x[frame] - self.cum_pan_x[seg.start_frame]
        cpy = self.cum_pan_y[frame] - self.cum_pan_y[seg.start_frame]
        return (seg.x + seg.vx * dt + cpx, seg.y + seg.vy * dt + cpy)


# New objects mostly appear near existing ones (traffic, crowds) or enter
# from the frame border; a minority pop up anywhere.
CLUSTER_SPAWN_PROB = 0.8
EDGE_SPAWN_PROB = 0.12


def _spawn(
    rng: np.random.Generator,
    cfg: SceneConfig,
    geom: GridGeometry,
    object_id: int,
    neighbors=(),
):
    w = rng.uniform(*cfg.object_size_range)
    h = rng.uniform(*cfg.object_size_range)
    pw, ph = geom.padded_width_px, geom.padded_height_px
    speed = rng.uniform(*cfg.object_speed_range)
    roll = rng.random()
    if roll < CLUSTER_SPAWN_PROB and neighbors:
        anchor = neighbors[int(rng.integers(len(neighbors)))]
        spread = 0.5 * geom.region_px
        x = min(max(0.0, anchor["x"] + rng.uniform(-spread, spread)), max(1.0, pw - w))
        y = min(max(0.0, anchor["y"] + rng.uniform(-spread, spread)), max(1.0, ph - h))
        angle = rng.uniform(0.0, 2.0 * np.pi)
    elif roll < CLUSTER_SPAWN_PROB + EDGE_SPAWN_PROB:
        side = int(rng.integers(4))
        band_x, band_y = 0.15 * pw, 0.15 * ph
        if side == 0:  # left, heading right-ish
            x = rng.uniform(0.0, band_x)
            y = rng.uniform(0.0, max(1.0, ph - h))
            angle = rng.uniform(-0.5 * np.pi, 0.5 * np.pi)
        elif side == 1:  # right, heading left-ish
            x = rng.uniform(max(0.0, pw - w - band_x), max(1.0, pw - w))
            y = rng.uniform(0.0, max(1.0, ph - h))
            angle = rng.uniform(0.5 * np.pi, 1.5 * np.pi)
        elif side == 2:  # top, heading down-ish
            x = rng.uniform(0.0, max(1.0, pw - w))
            y = rng.uniform(0.0, band_y)
            angle = rng.uniform(0.0, np.pi)
        else:  # bottom, heading up-ish
            x = rng.uniform(0.0, max(1.0, pw - w))
            y = rng.uniform(max(0.0, ph - h - band_y), max(1.0, ph - h))
            angle = rng.uniform(-np.pi, 0.0)
    else:
        x = rng.uniform(0.0, max(1.0, pw - w))
        y = rng.uniform(0.0, max(1.0, ph - h))
        angle = rng.uniform(0.0, 2.0 * np.pi)
    vx = float(speed * np.cos(angle))
    vy = float(speed * np.sin(angle))
    return {
        "id": object_id,
        "x": x,
        "y": y,
        "w": w,
        "h": h,
        "vx": vx,
        "vy": vy,
        "segments": [],  # filled with (frame, x, y, vx, vy) at spawn/turns
    }


def generate_world(cfg: SceneConfig, geom: GridGeometry) -> SceneWorld:
    """Roll the world forward for the configured duration.

    Deterministic given (cfg.seed, geom). Objects fully leaving the padded
    frame despawn and are replaced; random churn replaces one object per
    event so the population stays at object_count.
    """
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n = cfg.duration_frames

    # Piecewise-constant pan schedule; pan[0] = 0 (no shift into frame 0).
    pan_x = np.zeros(n)
    pan_y = np.zeros(n)
    t = 1
    while t < n:
        seg = int(rng.integers(PAN_SEGMENT_FRAMES[0], PAN_SEGMENT_FRAMES[1] + 1))
        # Bimodal magnitude: calm stretches alternate with busy sweeps.
        if rng.random() < 0.5:
            mag = cfg.camera_pan * rng.uniform(0.05, 0.3)
        else:
            mag = cfg.camera_pan * rng.uniform(0.7, 1.0)
        px = mag * (1.0 if rng.random() < 0.5 else -1.0)
        py = rng.uniform(-0.2 * mag, 0.2 * mag)
        pan_x[t : t + seg] = px
        pan_y[t : t + seg] = py
        t += seg

    clutter = np.zeros(geom.region_count)
    is_clutter = rng.random(geom.region_count) < cfg.clutter_density
    for j in range(geom.region_count):
        # High-texture scenery responds strongly to pan; plain background
        # produces only a faint residue.
        clutter[j] = rng.uniform(0.5, 1.0) if is_clutter[j] else rng.uniform(0.004, 0.012)

    next_id = 1
    active: list[dict] = []
    finished: list[ObjectTrack] = []
    spawn_frames: dict[int, int] = {}

    def open_segment(obj: dict, frame: int) -> None:
        obj["segments"].append(Segment(frame, obj["x"], obj["y"], obj["vx"], obj["vy"]))

    for _ in range(cfg.object_count):
        obj = _spawn(rng, cfg, geom, next_id)
        spawn_frames[next_id] = 0
        open_segment(obj, 0)
        next_id += 1
        active.append(obj)

    def close(obj: dict, frame: int) -> None:
        finished.append(
            ObjectTrack(
                object_id=obj["id"],
                spawn_frame=spawn_frames[obj["id"]],
                despawn_frame=frame,
                w=obj["w"],
                h=obj["h"],
                segments=tuple(obj["segments"]),
            )
        )

    for frame in range(1, n):
        for obj in active:
            obj["x"] += obj["vx"] + pan_x[frame]
            obj["y"] += obj["vy"] + pan_y[frame]
            # Occasional direction change; speed is preserved.
            if cfg.turn_rate > 0 and rng.random() < cfg.turn_rate:
                speed = float(np.hypot(obj["vx"], obj["vy"]))
                angle = float(np.arctan2(obj["vy"], obj["vx"])) + rng.uniform(-1.2, 1.2)
                obj["vx"] = float(speed * np.cos(angle))
                obj["vy"] = float(speed * np.sin(angle))
                open_segment(obj, frame)
        if rng.random() < cfg.spawn_despawn_rate and active:
            victim = int(rng.integers(len(active)))
            close(active[victim], frame)
            neighbors = [o for i, o in enumerate(active) if i != victim]
            obj = _spawn(rng, cfg, geom, next_id, neighbors)
            spawn_frames[next_id] = frame
            open_segment(obj, frame)
            next_id += 1
            active[victim] = obj
        # Objects fully outside the padded frame despawn and are replaced.
        for i, obj in enumerate(active):
            if (
                obj["x"] + obj["w"] <= 0
                or obj["y"] + obj["h"] <= 0
                or obj["x"] >= geom.padded_width_px
                or obj["y"] >= geom.padded_height_px
            ):
                close(obj, frame)
                neighbors = [o for o in active if o is not obj]
                repl = _spawn(rng, cfg, geom, next_id, neighbors)
                spawn_frames[next_id] = frame
                open_segment(repl, frame)
                next_id += 1
                active[i] = repl

    for obj in active:
        close(obj, n)

    finished.sort(key=lambda tr: tr.object_id)
    return SceneWorld(
        config=cfg,
        geometry=geom,
        tracks=tuple(finished),
        pan_x=tuple(pan_x),
        pan_y=tuple(pan_y),
        cum_pan_x=tuple(np.cumsum(pan_x)),
        cum_pan_y=tuple(np.cumsum(pan_y)),
        clutter_strength=tuple(clutter),
    )


def _region_overlap_area(
    geom: GridGeometry, x0: float, y0: float, x1: float, y1: float, out: np.ndarray
) -> None:
    """Accumulate the box's overlap area into per-region buffer ``out``."""
    s = geom.region_px
    c0 = max(0, int(x0 // s))
    c1 = min(geom.grid_cols - 1, int((x1 - 1e-9) // s))
    r0 = max(0, int(y0 // s))
    r1 = min(geom.grid_rows - 1, int((y1 - 1e-9) // s))
    for row in range(r0, r1 + 1):
        for col in range(c0, c1 + 1):
            ox = min(x1, (col + 1) * s) - max(x0, col * s)
            oy = min(y1, (row + 1) * s) - max(y0, row * s)
            if ox > 0 and oy > 0:
                out[row * geom.grid_cols + col] += ox * oy


def truth_for_frame(world: SceneWorld, frame: int) -> FrameTruth:
    """Derive one frame's boxes and foreground counts from the world."""
    geom = world.geometry
    boxes: list[Box] = []
    fg = np.array(world.clutter_strength) * (
        float(np.hypot(world.pan_x[frame], world.pan_y[frame])) * PAN_FG_COEFF
    )
    fg *= geom.region_px * geom.region_px

    for track in world.tracks:
        if not track.spawn_frame <= frame < track.despawn_frame:
            continue
        x, y = world.position_at(track, frame)
        cx0 = max(0.0, x)
        cy0 = max(0.0, y)
        cx1 = min(float(geom.padded_width_px), x + track.w)
        cy1 = min(float(geom.padded_height_px), y + track.h)
        if cx1 <= cx0 or cy1 <= cy0:
            continue
        boxes.append(Box(track.object_id, cx0, cy0, cx1 - cx0, cy1 - cy0))
        obj_fg = np.zeros(geom.region_count)
        _region_overlap_area(geom, cx0, cy0, cx1, cy1, obj_fg)
        fg += obj_fg * OBJECT_FG_FILL

    np.minimum(fg, REGION_FG_CAP * geom.region_px * geom.region_px, out=fg)
    return FrameTruth(
        frame_id=frame,
        boxes=tuple(boxes),
        foreground_px=tuple(float(v) for v in fg),
        total_fg_px=float(fg.sum()),
    )


def generate_truth(cfg: SceneConfig, geom: GridGeometry) -> list[FrameTruth]:
    """Generate the full per-frame truth sequence. Deterministic per seed."""
    world = generate_world(cfg, geom)
    return [truth_for_frame(world, f) for f in range(cfg.duration_frames)]


def ground_truth_boxes(truth: FrameTruth) -> tuple[Box, ...]:
    """Boxes with stable object ids; no merging, no suppression."""
    return truth.boxes


# Scene presets mirror the evaluation corpus structure: low-pan walking
# scenes vs high-pan cycling/driving, sparse vs dense objects. Parameters
# are calibration knobs, not measurements.
PRESETS: dict[str, SceneConfig] = {
    "walkS": SceneConfig(
        seed=0, duration_frames=9000, object_count=6,
        object_speed_range=(0.8, 3.5), object_size_range=(50.0, 130.0),
        camera_pan=1.5, spawn_despawn_rate=0.010, clutter_density=0.25, turn_rate=0.045,
        scene_id="walkS",
    ),
    "walkR": SceneConfig(
        seed=0, duration_frames=9000, object_count=7,
        object_speed_range=(0.8, 4.0), object_size_range=(45.0, 120.0),
        camera_pan=2.0, spawn_despawn_rate=0.015, clutter_density=0.35, turn_rate=0.045,
        scene_id="walkR",
    ),
    "walkB": SceneConfig(
        seed=0, duration_frames=9000, object_count=9,
        object_speed_range=(1.0, 4.5), object_size_range=(40.0, 110.0),
        camera_pan=1.2, spawn_despawn_rate=0.020, clutter_density=0.20, turn_rate=0.05,
        scene_id="walkB",
    ),
    "cycleS": SceneConfig(
        seed=0, duration_frames=9000, object_count=6,
        object_speed_range=(1.0, 5.0), object_size_range=(40.0, 120.0),
        camera_pan=4.0, spawn_despawn_rate=0.030, clutter_density=0.45, turn_rate=0.03,
        scene_id="cycleS",
    ),
    "driveN": SceneConfig(
        seed=0, duration_frames=9000, object_count=5,
        object_speed_range=(1.0, 5.0), object_size_range=(40.0, 150.0),
        camera_pan=6.0, spawn_despawn_rate=0.035, clutter_density=0.55, turn_rate=0.025,
        scene_id="driveN",
    ),
}


def scene_config_to_json(cfg: SceneConfig) -> str:
    """Serialize a SceneConfig to the documented preset-file schema.

    Schema: a JSON object with exactly the SceneConfig fields; range fields
    are two-element arrays [lo, hi].
    """
    d = {
        "scene_id": cfg.scene_id,
        "seed": cfg.seed,
        "duration_frames": cfg.duration_frames,
        "fps": cfg.fps,
        "object_count": cfg.object_count,
        "object_speed_range": list(cfg.object_speed_range),
        "object_size_range": list(cfg.object_size_range),
        "camera_pan": cfg.camera_pan,
        "spawn_despawn_rate": cfg.spawn_despawn_rate,
        "clutter_density": cfg.clutter_density,
        "turn_rate": cfg.turn_rate,
    }
    return json.dumps(d, indent=2, sort_keys=True)


def scene_config_from_json(text: str) -> SceneConfig:
    d = json.loads(text)
    try:
        return SceneConfig(
            seed=int(d["seed"]),
            duration_frames=int(d["duration_frames"]),
            fps=float(d.get("fps", 30.0)),
            object_count=int(d["object_count"]),
            object_speed_range=tuple(float(v) for v in d["object_speed_range"]),
            object_size_range=tuple(float(v) for v in d["object_size_range"]),
            camera_pan=float(d["camera_pan"]),
            spawn_despawn_rate=float(d["spawn_despawn_rate"]),
            clutter_density=float(d["clutter_density"]),
            turn_rate=float(d.get("turn_rate", 0.01)),
            scene_id=str(d.get("scene_id", "custom")),
        )
    except KeyError as exc:
        raise ValueError(f"scene preset missing field {exc}") from exc


def load_preset(name_or_path: str) -> SceneConfig:
    """Resolve a scene: built-in preset id, else a path to a preset file."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    try:
        with open(name_or_path, "r", encoding="utf-8") as fh:
            return scene_config_from_json(fh.read())
    except FileNotFoundError:
        raise ValueError(
            f"unknown scene {name_or_path!r}: not a preset "
            f"({', '.join(sorted(PRESETS))}) and not a readable file"
        ) from None


def with_duration(cfg: SceneConfig, frames: int) -> SceneConfig:
    return replace(cfg, duration_frames=frames)


def with_seed(cfg: SceneConfig, seed: int) -> SceneConfig:
    return replace(cfg, seed=seed)
