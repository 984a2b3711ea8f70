"""Analytic edge server: ground-truth delays, payload sizes and accuracy.

Everything the control plane consumes is a scalar signal, so the server is
a set of calibrated parametric surfaces plus seeded noise: no model is
executed and no image exists. The same surfaces double as the oracle that
labels profiling data for the estimator models.

Noise is counter-based (keyed Philox streams derived from the inputs), so
results are reproducible and independent of call order.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import motion as motion_mod
from .grid import DownsampleMask, GridGeometry, mixed_pixel_count, token_count
from .scene import Box, FrameTruth

# Published anchors for the backbone cost line: a 1080p-grid token load runs
# at 281 ms, a 360p-equivalent token load at 39 ms.
FULL_TOKENS_ANCHOR = 9072
FULL_MS_ANCHOR = 281.0
LOW_TOKENS_ANCHOR = 1008
LOW_MS_ANCHOR = 39.0


class PayloadKind(enum.Enum):
    """How the offloaded frame was prepared on the device."""

    MIXED = "mixed"  # per-region mixed resolution (restoration point applies)
    BLANKED = "blanked"  # masked regions zeroed out, resolution unchanged
    UNIFORM = "uniform"  # whole frame uniformly downsampled


@dataclass(frozen=True)
class ServerProfile:
    """Calibration constants for all ground-truth surfaces."""

    seed: int
    region_count: int
    # decode
    dec_mean_ms: float
    dec_noise_sigma: float
    # inference: per-beta linear models a + b * N_d
    inf_intercepts: tuple[float, ...]
    inf_slopes: tuple[float, ...]
    inf_floor_intercept_ms: float  # token-proportional floor: f0 + f1 * tokens
    inf_floor_per_token_ms: float
    inf_noise_sigma: float
    # payload size
    size_base_kib_per_px: float  # anchored at lambda = 95
    size_quality_alpha: float  # byte growth per quality step below 95
    size_quality_alpha_hi: float  # steeper growth above 95 (near-lossless)
    size_noise_sigma: float
    # accuracy
    acc_quality_coeff: float  # loss per unit (100 - lambda)/30
    acc_down_coeff: float  # mixed/uniform loss scale on downsampled object area
    acc_context_coeff: float  # global loss per fraction of frame downsampled
    acc_restore_gain: tuple[float, ...]  # g(beta), increasing
    # encode (device side, profiled by the client)
    enc_base_ms: float
    enc_per_mpx_ms: float
    enc_quality_gain: float
    enc_overhead_ms: dict[str, float]  # per PayloadKind value, mixed applies when N_d > 0
    enc_noise_sigma: float
    box_jitter_base_px: float

    def __post_init__(self) -> None:
        if len(self.inf_intercepts) != len(self.inf_slopes):
            raise ValueError("inference intercepts/slopes length mismatch")
        if any(a <= 0 for a in self.inf_intercepts):
            raise ValueError("inference intercepts must be positive")
        if any(b > 0 for b in self.inf_slopes):
            raise ValueError("inference slopes must be <= 0")
        if self.dec_mean_ms <= 0:
            raise ValueError("dec_mean_ms must be positive")
        if any(
            self.acc_restore_gain[i] > self.acc_restore_gain[i + 1]
            for i in range(len(self.acc_restore_gain) - 1)
        ):
            raise ValueError("acc_restore_gain must be non-decreasing in beta")


def default_profile(geom: GridGeometry, seed: int = 0) -> ServerProfile:
    """Build a profile anchored to the published delay points for ``geom``."""
    f1 = (FULL_MS_ANCHOR - LOW_MS_ANCHOR) / (FULL_TOKENS_ANCHOR - LOW_TOKENS_ANCHOR)
    f0 = LOW_MS_ANCHOR - f1 * LOW_TOKENS_ANCHOR
    tokens_full = geom.region_count * geom.tokens_per_full_region
    tokens_down = geom.region_count * geom.tokens_per_downsampled_region
    full_cost = f0 + f1 * tokens_full
    restore_overhead = 23.0
    all_down_best = f0 + f1 * tokens_down + restore_overhead
    intercepts, slopes = [], []
    for beta in range(5):
        all_down_cost = full_cost - (full_cost - all_down_best) * (beta / 4.0)
        intercepts.append(full_cost)
        slopes.append(min(0.0, (all_down_cost - full_cost) / geom.region_count))
    return ServerProfile(
        seed=seed,
        region_count=geom.region_count,
        dec_mean_ms=6.0,
        dec_noise_sigma=0.04,
        inf_intercepts=tuple(intercepts),
        inf_slopes=tuple(slopes),
        inf_floor_intercept_ms=f0,
        inf_floor_per_token_ms=f1,
        inf_noise_sigma=0.03,
        size_base_kib_per_px=2.7e-4,
        size_quality_alpha=0.04,
        size_quality_alpha_hi=0.13,
        size_noise_sigma=0.08,
        acc_quality_coeff=0.28,
        acc_down_coeff=0.5,
        acc_context_coeff=0.22,
        acc_restore_gain=(0.35, 0.5, 0.62, 0.72, 1.0),
        enc_base_ms=6.6,
        enc_per_mpx_ms=6.0,
        enc_quality_gain=0.3,
        enc_overhead_ms={"mixed": 19.4, "blanked": 12.0, "uniform": 2.0},
        enc_noise_sigma=0.04,
        box_jitter_base_px=0.5,
    )


@dataclass(frozen=True)
class InferenceResult:
    frame_id: int
    boxes: tuple[Box, ...]
    inference_ms: float  # quantized to whole microseconds
    decode_ms: float


def _rng(profile: ServerProfile, *tags: int) -> np.random.Generator:
    """Keyed stream: independent of call order, stable across processes."""
    raw = struct.pack(f">{1 + len(tags)}q", profile.seed, *tags)
    digest = hashlib.blake2b(raw, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _config_tag(c) -> int:
    return (c.tau_d << 16) | (c.lambda_q << 8) | c.beta


_KIND_TAG = {PayloadKind.MIXED: 1, PayloadKind.BLANKED: 2, PayloadKind.UNIFORM: 3}


def _check_mask(c, mask: DownsampleMask, geom: GridGeometry, kind: PayloadKind) -> None:
    if mask.region_count != geom.region_count:
        raise ValueError("mask does not match geometry")
    if c.tau_d == 0 and kind is PayloadKind.MIXED and mask.n_downsampled != 0:
        raise ValueError("tau_d=0 requires an all-zero mask")
    if kind is PayloadKind.UNIFORM and mask.n_downsampled != mask.region_count:
        raise ValueError("uniform payloads imply an all-ones mask")


def _effective_pixels(geom: GridGeometry, mask: DownsampleMask, kind: PayloadKind, weight_blank: float) -> float:
    full_px = geom.padded_pixel_count
    if kind is PayloadKind.UNIFORM:
        return full_px / (geom.downsample_factor**2)
    if kind is PayloadKind.BLANKED:
        region_px = geom.region_px * geom.region_px
        blank_px = mask.n_downsampled * region_px
        return (full_px - blank_px) + weight_blank * blank_px
    return float(mixed_pixel_count(geom, mask))


def downsampled_object_fraction(
    truth: FrameTruth, geom: GridGeometry, mask: DownsampleMask
) -> float:
    """Fraction of total object area lying in masked regions (0 if no objects)."""
    total = 0.0
    masked = 0.0
    s = geom.region_px
    for box in truth.boxes:
        area = box.w * box.h
        total += area
        x1, y1 = box.x + box.w, box.y + box.h
        c0 = max(0, int(box.x // s))
        c1 = min(geom.grid_cols - 1, int((x1 - 1e-9) // s))
        r0 = max(0, int(box.y // s))
        r1 = min(geom.grid_rows - 1, int((y1 - 1e-9) // s))
        for row in range(r0, r1 + 1):
            for col in range(c0, c1 + 1):
                if mask.bits[row * geom.grid_cols + col]:
                    ox = min(x1, (col + 1) * s) - max(box.x, col * s)
                    oy = min(y1, (row + 1) * s) - max(box.y, row * s)
                    if ox > 0 and oy > 0:
                        masked += ox * oy
    if total <= 0:
        return 0.0
    return masked / total


# Object area at which detection reliability is nominal; smaller objects are
# missed disproportionately often, larger ones almost never.
_DETECT_REF_AREA_PX = 6000.0
# Detection miss persistence window, frames.
_MISS_BUCKET_FRAMES = 40


def _keep_probabilities(boxes: list[Box], a_objs: list[float]) -> list[float]:
    """Per-object detection probabilities realizing the frame accuracy.

    With no false positives, F1 = 2r/(1+r), so the target recall for an
    object with accuracy a is a/(2-a). Misses are skewed toward small
    objects while the frame-mean recall is preserved (a shared scale is
    solved by bisection so the clipped mean matches the target).
    """
    if not boxes:
        return []
    recalls = [a / (2.0 - a) for a in a_objs]
    target = sum(recalls) / len(recalls)
    if target <= 0.0:
        return [0.0] * len(boxes)
    weights = [
        min(3.0, max(0.2, b.w * b.h / _DETECT_REF_AREA_PX)) for b in boxes
    ]

    def clipped_mean(scale: float) -> float:
        return sum(min(1.0, scale * w * r) for w, r in zip(weights, recalls)) / len(boxes)

    lo, hi = 0.0, 10.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if clipped_mean(mid) < target:
            lo = mid
        else:
            hi = mid
    scale = 0.5 * (lo + hi)
    return [min(1.0, scale * w * r) for w, r in zip(weights, recalls)]


def _context_loss(profile: ServerProfile, c, mask: DownsampleMask, kind: PayloadKind) -> float:
    """Global detection degradation from shrinking part of the frame.

    Applies to the whole frame (feature context is shared), scaled by how
    late restoration happens; blanked payloads pay it at full weight.
    """
    frac = mask.n_downsampled / mask.region_count
    gain = 0.3 if kind is PayloadKind.BLANKED else profile.acc_restore_gain[c.beta]
    return profile.acc_context_coeff * frac * gain


def _blanked_loss(frac: float) -> float:
    """Objects straddling an RoI border survive; mostly-blanked ones are lost."""
    return min(1.0, max(0.0, (frac - 0.35) / 0.45))


def _object_fraction_in_mask(box: Box, geom: GridGeometry, mask: DownsampleMask) -> float:
    area = box.w * box.h
    if area <= 0:
        return 0.0
    s = geom.region_px
    x1, y1 = box.x + box.w, box.y + box.h
    c0 = max(0, int(box.x // s))
    c1 = min(geom.grid_cols - 1, int((x1 - 1e-9) // s))
    r0 = max(0, int(box.y // s))
    r1 = min(geom.grid_rows - 1, int((y1 - 1e-9) // s))
    masked = 0.0
    for row in range(r0, r1 + 1):
        for col in range(c0, c1 + 1):
            if mask.bits[row * geom.grid_cols + col]:
                ox = min(x1, (col + 1) * s) - max(box.x, col * s)
                oy = min(y1, (row + 1) * s) - max(box.y, row * s)
                if ox > 0 and oy > 0:
                    masked += ox * oy
    return masked / area


def token_floor_ms(profile: ServerProfile, tokens: int) -> float:
    """Backbone cost if every block ran at the given token load."""
    return profile.inf_floor_intercept_ms + profile.inf_floor_per_token_ms * tokens


def true_inference_ms(
    profile: ServerProfile,
    c,
    n_d: int,
    kind: PayloadKind = PayloadKind.MIXED,
    frame_id: int = 0,
) -> float:
    """Sampled inference delay, quantized to whole microseconds."""
    if kind is PayloadKind.BLANKED:
        base_ms = profile.inf_intercepts[0]  # full token load, no restoration
    else:
        base_ms = profile.inf_intercepts[c.beta] + profile.inf_slopes[c.beta] * n_d
    rng = _rng(profile, 4, frame_id, _config_tag(c), _KIND_TAG[kind], n_d)
    ms = base_ms * math.exp(rng.normal(0.0, profile.inf_noise_sigma))
    return round(ms * 1000.0) / 1000.0


# Per-region compressibility: a flat region costs _SIZE_W_LO byte-units per
# pixel, a fully active (textured/moving) one _SIZE_W_LO + _SIZE_W_HI.
_SIZE_W_LO = 0.15
_SIZE_W_HI = 2.5
# Foreground fraction of a region at which its texture weight saturates.
_ACTIVITY_REF = 0.12


def _region_activity(truth: FrameTruth, geom: GridGeometry) -> list[float]:
    area = geom.region_px * geom.region_px
    return [min(1.0, (fg / area) / _ACTIVITY_REF) for fg in truth.foreground_px]


def true_size(
    profile: ServerProfile,
    c,
    truth: FrameTruth,
    geom: GridGeometry,
    mask: DownsampleMask,
    kind: PayloadKind = PayloadKind.MIXED,
) -> float:
    """Compressed payload size in KiB for this configuration and content.

    Each region contributes pixels weighted by its texture/activity;
    downsampling shrinks the contribution by d^2, so masking busy regions
    saves far more than masking flat ones. Blanked regions cost almost
    nothing regardless of content.
    """
    _check_mask(c, mask, geom, kind)
    activity = _region_activity(truth, geom)
    region_px = geom.region_px * geom.region_px
    d2 = geom.downsample_factor**2
    units = 0.0
    for j, a_j in enumerate(activity):
        weight = _SIZE_W_LO + _SIZE_W_HI * a_j
        if kind is PayloadKind.UNIFORM:
            units += region_px / d2 * weight
        elif kind is PayloadKind.BLANKED:
            units += (0.02 * region_px) if mask.bits[j] else region_px * weight
        elif mask.bits[j]:
            units += region_px / d2 * weight
        else:
            units += region_px * weight
    alpha = profile.size_quality_alpha if c.lambda_q <= 95 else profile.size_quality_alpha_hi
    quality = math.exp(alpha * (c.lambda_q - 95))
    # One content-noise draw per frame, shared by all configurations, so
    # size comparisons across the candidate grid are noise-free.
    rng = _rng(profile, 1, truth.frame_id)
    noise = math.exp(rng.normal(0.0, profile.size_noise_sigma))
    return max(1.0, profile.size_base_kib_per_px * units * quality * noise)


def true_accuracy(
    profile: ServerProfile,
    c,
    truth: FrameTruth,
    geom: GridGeometry,
    mask: DownsampleMask,
    kind: PayloadKind = PayloadKind.MIXED,
) -> float:
    """Inference F1 the server would achieve on this frame, in [0, 1]."""
    _check_mask(c, mask, geom, kind)
    quality_loss = profile.acc_quality_coeff * (100 - c.lambda_q) / 30.0
    ctx_loss = _context_loss(profile, c, mask, kind)
    if kind is PayloadKind.BLANKED:
        # Per-object: mostly-blanked objects are simply gone.
        total = sum(b.w * b.h for b in truth.boxes)
        if total <= 0:
            down_loss = 0.0
        else:
            down_loss = sum(
                _blanked_loss(_object_fraction_in_mask(b, geom, mask)) * b.w * b.h
                for b in truth.boxes
            ) / total
    else:
        overlap = downsampled_object_fraction(truth, geom, mask)
        down_loss = profile.acc_down_coeff * overlap * profile.acc_restore_gain[c.beta]
    return min(1.0, max(0.0, 1.0 - quality_loss - ctx_loss - down_loss))


def true_encode_ms(
    profile: ServerProfile,
    c,
    geom: GridGeometry,
    mask: DownsampleMask,
    kind: PayloadKind = PayloadKind.MIXED,
    frame_id: int = 0,
) -> float:
    """Device-side encode delay (preprocessing + compression)."""
    _check_mask(c, mask, geom, kind)
    mpx = _effective_pixels(geom, mask, kind, weight_blank=0.55) / 1e6
    overhead = 0.0
    if kind is PayloadKind.MIXED:
        if mask.n_downsampled > 0:
            overhead = profile.enc_overhead_ms["mixed"]
    else:
        overhead = profile.enc_overhead_ms[kind.value]
    base = (
        profile.enc_base_ms
        + profile.enc_per_mpx_ms * mpx * (1.0 + profile.enc_quality_gain * (c.lambda_q - 70) / 30.0)
        + overhead
    )
    rng = _rng(profile, 2, frame_id, _config_tag(c), _KIND_TAG[kind], mask.n_downsampled)
    return base * math.exp(rng.normal(0.0, profile.enc_noise_sigma))


def true_decode_ms(
    profile: ServerProfile,
    c,
    geom: GridGeometry,
    mask: DownsampleMask,
    kind: PayloadKind = PayloadKind.MIXED,
    frame_id: int = 0,
) -> float:
    """Server-side decode delay; scales with received pixel count."""
    _check_mask(c, mask, geom, kind)
    ratio = _effective_pixels(geom, mask, kind, weight_blank=0.1) / geom.padded_pixel_count
    rng = _rng(profile, 3, frame_id, _config_tag(c), _KIND_TAG[kind], mask.n_downsampled)
    return profile.dec_mean_ms * (0.35 + 0.65 * ratio) * math.exp(
        rng.normal(0.0, profile.dec_noise_sigma)
    )


def infer(
    profile: ServerProfile,
    c,
    mask: DownsampleMask,
    truth: FrameTruth,
    geom: GridGeometry,
    kind: PayloadKind = PayloadKind.MIXED,
) -> InferenceResult:
    """Synthesize the inference result the edge server would return.

    Per-object keep decisions realize the frame's true accuracy; kept boxes
    are jittered according to quality and regional resolution. Boxes are
    quantized to float32 and the delay to whole microseconds so that wire
    and in-process transports agree bit-for-bit.
    """
    _check_mask(c, mask, geom, kind)
    n_d = mask.n_downsampled
    inference_ms = true_inference_ms(profile, c, n_d, kind, truth.frame_id)

    quality_loss = profile.acc_quality_coeff * (100 - c.lambda_q) / 30.0
    ctx_loss = _context_loss(profile, c, mask, kind)
    ordered = sorted(truth.boxes, key=lambda b: b.object_id)
    fracs = [_object_fraction_in_mask(b, geom, mask) for b in ordered]
    a_objs = []
    for box, frac in zip(ordered, fracs):
        if kind is PayloadKind.BLANKED:
            down_loss = _blanked_loss(frac)
        else:
            down_loss = profile.acc_down_coeff * frac * profile.acc_restore_gain[c.beta]
        a_objs.append(min(1.0, max(0.0, 1.0 - quality_loss - ctx_loss - down_loss)))
    keep_probs = _keep_probabilities(ordered, a_objs)

    boxes: list[Box] = []
    for box, frac, keep_prob in zip(ordered, fracs, keep_probs):
        # Misses persist for ~1.5 s (occlusion-like) rather than flickering
        # per frame; jitter stays per-frame.
        miss_rng = _rng(
            profile, 5, truth.frame_id // _MISS_BUCKET_FRAMES, _config_tag(c),
            _KIND_TAG[kind], box.object_id,
        )
        obj_rng = _rng(
            profile, 6, truth.frame_id, _config_tag(c), _KIND_TAG[kind], box.object_id
        )
        if miss_rng.random() >= keep_prob:
            continue
        sigma = profile.box_jitter_base_px * (
            1.0
            + 2.0 * (100 - c.lambda_q) / 30.0
            + 3.0 * frac
            + 2.0 * (n_d / mask.region_count) * profile.acc_restore_gain[c.beta]
        )
        dx, dy, dw, dh = obj_rng.normal(0.0, sigma, size=4)
        x = min(max(0.0, box.x + dx), geom.padded_width_px - 1.0)
        y = min(max(0.0, box.y + dy), geom.padded_height_px - 1.0)
        w = max(2.0, box.w + dw)
        h = max(2.0, box.h + dh)
        w = min(w, geom.padded_width_px - x)
        h = min(h, geom.padded_height_px - y)
        boxes.append(
            Box(
                box.object_id,
                float(np.float32(x)),
                float(np.float32(y)),
                float(np.float32(w)),
                float(np.float32(h)),
            )
        )
    decode_ms = true_decode_ms(profile, c, geom, mask, kind, truth.frame_id)
    return InferenceResult(
        frame_id=truth.frame_id,
        boxes=tuple(boxes),
        inference_ms=inference_ms,
        decode_ms=decode_ms,
    )


def profile_to_json(profile: ServerProfile) -> str:
    d = {
        "seed": profile.seed,
        "region_count": profile.region_count,
        "dec_mean_ms": profile.dec_mean_ms,
        "dec_noise_sigma": profile.dec_noise_sigma,
        "inf_intercepts": list(profile.inf_intercepts),
        "inf_slopes": list(profile.inf_slopes),
        "inf_floor_intercept_ms": profile.inf_floor_intercept_ms,
        "inf_floor_per_token_ms": profile.inf_floor_per_token_ms,
        "inf_noise_sigma": profile.inf_noise_sigma,
        "size_base_kib_per_px": profile.size_base_kib_per_px,
        "size_quality_alpha": profile.size_quality_alpha,
        "size_quality_alpha_hi": profile.size_quality_alpha_hi,
        "size_noise_sigma": profile.size_noise_sigma,
        "acc_quality_coeff": profile.acc_quality_coeff,
        "acc_down_coeff": profile.acc_down_coeff,
        "acc_context_coeff": profile.acc_context_coeff,
        "acc_restore_gain": list(profile.acc_restore_gain),
        "enc_base_ms": profile.enc_base_ms,
        "enc_per_mpx_ms": profile.enc_per_mpx_ms,
        "enc_quality_gain": profile.enc_quality_gain,
        "enc_overhead_ms": dict(profile.enc_overhead_ms),
        "enc_noise_sigma": profile.enc_noise_sigma,
        "box_jitter_base_px": profile.box_jitter_base_px,
    }
    return json.dumps(d, indent=2, sort_keys=True)


def profile_from_json(text: str) -> ServerProfile:
    d = json.loads(text)
    return ServerProfile(
        seed=int(d["seed"]),
        region_count=int(d["region_count"]),
        dec_mean_ms=float(d["dec_mean_ms"]),
        dec_noise_sigma=float(d["dec_noise_sigma"]),
        inf_intercepts=tuple(float(v) for v in d["inf_intercepts"]),
        inf_slopes=tuple(float(v) for v in d["inf_slopes"]),
        inf_floor_intercept_ms=float(d["inf_floor_intercept_ms"]),
        inf_floor_per_token_ms=float(d["inf_floor_per_token_ms"]),
        inf_noise_sigma=float(d["inf_noise_sigma"]),
        size_base_kib_per_px=float(d["size_base_kib_per_px"]),
        size_quality_alpha=float(d["size_quality_alpha"]),
        size_quality_alpha_hi=float(d["size_quality_alpha_hi"]),
        size_noise_sigma=float(d["size_noise_sigma"]),
        acc_quality_coeff=float(d["acc_quality_coeff"]),
        acc_down_coeff=float(d["acc_down_coeff"]),
        acc_context_coeff=float(d["acc_context_coeff"]),
        acc_restore_gain=tuple(float(v) for v in d["acc_restore_gain"]),
        enc_base_ms=float(d["enc_base_ms"]),
        enc_per_mpx_ms=float(d["enc_per_mpx_ms"]),
        enc_quality_gain=float(d["enc_quality_gain"]),
        enc_overhead_ms={str(k): float(v) for k, v in d["enc_overhead_ms"].items()},
        enc_noise_sigma=float(d["enc_noise_sigma"]),
        box_jitter_base_px=float(d["box_jitter_base_px"]),
    )
