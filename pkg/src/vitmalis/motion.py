"""Region motion analysis and SBR/CMR/DOR classification.

Per-region motion is the region's share of the frame's foreground pixels;
frame motion is the foreground share of all pixels. Relevance is the
fraction of objects whose boxes overlap each region. Classification is
ordered: low motion wins (SBR), then high relevance (DOR), else CMR.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .grid import GridGeometry, DownsampleMask, RegionType, RegionTypeMap
from .scene import Box, FrameTruth


@dataclass(frozen=True)
class MotionReport:
    m: tuple[float, ...]  # per-region share of frame foreground, sums to 1
    m_frame: float  # foreground share of all padded pixels


@dataclass(frozen=True)
class RelevanceReport:
    rho: tuple[float, ...]  # per-region fraction of objects overlapping
    mean_rho: float
    std_rho: float  # population standard deviation over all regions


def analyze_motion(truth: FrameTruth, geom: GridGeometry) -> MotionReport:
    if len(truth.foreground_px) != geom.region_count:
        raise ValueError(
            f"truth has {len(truth.foreground_px)} regions, geometry has {geom.region_count}"
        )
    total = truth.total_fg_px
    if total > 0:
        m = tuple(v / total for v in truth.foreground_px)
    else:
        m = (0.0,) * geom.region_count
    return MotionReport(m=m, m_frame=total / geom.padded_pixel_count)


def compute_relevance(boxes: Sequence[Box], geom: GridGeometry) -> RelevanceReport:
    """Fraction of objects whose boxes partially or fully overlap each region."""
    counts = [0] * geom.region_count
    n_obj = len(boxes)
    s = geom.region_px
    for box in boxes:
        x1 = box.x + box.w
        y1 = box.y + box.h
        c0 = max(0, int(box.x // s))
        c1 = min(geom.grid_cols - 1, int((x1 - 1e-9) // s))
        r0 = max(0, int(box.y // s))
        r1 = min(geom.grid_rows - 1, int((y1 - 1e-9) // s))
        for row in range(r0, r1 + 1):
            for col in range(c0, c1 + 1):
                ox = min(x1, (col + 1) * s) - max(box.x, col * s)
                oy = min(y1, (row + 1) * s) - max(box.y, row * s)
                if ox > 0 and oy > 0:
                    counts[row * geom.grid_cols + col] += 1
    if n_obj == 0:
        rho = (0.0,) * geom.region_count
    else:
        rho = tuple(c / n_obj for c in counts)
    mean = sum(rho) / len(rho)
    var = sum((r - mean) ** 2 for r in rho) / len(rho)
    return RelevanceReport(rho=rho, mean_rho=mean, std_rho=var**0.5)


def classify_regions(
    motion: MotionReport,
    relevance: RelevanceReport,
    delta_m: float,
    delta_rho: float,
) -> RegionTypeMap:
    """Label each region SBR, DOR, or CMR.

    Decision order: m_j < delta_m -> SBR; else rho_j > delta_rho (strict)
    -> DOR; else CMR.
    """
    if len(motion.m) != len(relevance.rho):
        raise ValueError(
            f"motion has {len(motion.m)} regions, relevance has {len(relevance.rho)}"
        )
    types = []
    for m_j, rho_j in zip(motion.m, relevance.rho):
        if m_j < delta_m:
            types.append(RegionType.SBR)
        elif rho_j > delta_rho:
            types.append(RegionType.DOR)
        else:
            types.append(RegionType.CMR)
    return RegionTypeMap(types=tuple(types))


def downsampled_motion(motion: MotionReport, mask: DownsampleMask) -> float:
    """Sum of motion values over downsampled regions (the m^d feature)."""
    if len(motion.m) != mask.region_count:
        raise ValueError("motion vector and mask lengths differ")
    return sum(m for m, b in zip(motion.m, mask.bits) if b)
