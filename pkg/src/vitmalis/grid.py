"""Integer geometry of patches, attention windows, decision regions and masks.

A frame is padded up to a whole number of square decision regions. Each
region spans ``r x r`` patches where ``r = w * d`` (``w`` = attention window
side in patches, ``d`` = downsampling factor), so downsampled regions still
tile attention windows exactly. All arithmetic here is exact integer math;
no pixel data is ever touched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class RegionType(enum.Enum):
    """Content category of one decision region."""

    SBR = "SBR"  # static background: low motion, low relevance
    CMR = "CMR"  # camera-induced motion: high motion, low relevance
    DOR = "DOR"  # dynamic object: high motion, high relevance


# Region categories targeted for downsampling by each downsampling type.
# DOR regions are never downsampled.
DOWNSAMPLE_TARGETS: dict[int, frozenset[RegionType]] = {
    0: frozenset(),
    1: frozenset({RegionType.CMR}),
    2: frozenset({RegionType.CMR, RegionType.SBR}),
}


@dataclass(frozen=True)
class GridGeometry:
    """Partition of a (padded) frame into decision regions."""

    frame_width_px: int
    frame_height_px: int
    patch_px: int
    window_patches: int
    downsample_factor: int
    region_patches: int
    padded_width_px: int
    padded_height_px: int
    grid_cols: int
    grid_rows: int
    region_count: int

    @property
    def region_px(self) -> int:
        """Side of one decision region in pixels."""
        return self.region_patches * self.patch_px

    @property
    def padded_pixel_count(self) -> int:
        return self.padded_width_px * self.padded_height_px

    @property
    def tokens_per_full_region(self) -> int:
        return self.region_patches * self.region_patches

    @property
    def tokens_per_downsampled_region(self) -> int:
        side = self.region_patches // self.downsample_factor
        return side * side

    def region_rect(self, index: int) -> tuple[int, int, int, int]:
        """Pixel rect (x0, y0, x1, y1) of region ``index`` (row-major)."""
        if not 0 <= index < self.region_count:
            raise ValueError(f"region index {index} out of range [0, {self.region_count})")
        row, col = divmod(index, self.grid_cols)
        s = self.region_px
        return (col * s, row * s, (col + 1) * s, (row + 1) * s)


@dataclass(frozen=True)
class DownsampleMask:
    """Per-region binary downsampling decision, row-major from top-left."""

    bits: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))

    @property
    def region_count(self) -> int:
        return len(self.bits)

    @property
    def n_downsampled(self) -> int:
        return sum(self.bits)

    def pack(self) -> bytes:
        """Pack to a big-endian bitset, MSB-first, ceil(n/8) bytes."""
        out = bytearray((len(self.bits) + 7) // 8)
        for i, bit in enumerate(self.bits):
            if bit:
                out[i // 8] |= 0x80 >> (i % 8)
        return bytes(out)

    @classmethod
    def unpack(cls, data: bytes, region_count: int) -> "DownsampleMask":
        if len(data) != (region_count + 7) // 8:
            raise ValueError(
                f"packed mask is {len(data)} bytes, expected "
                f"{(region_count + 7) // 8} for {region_count} regions"
            )
        bits = tuple(
            bool(data[i // 8] & (0x80 >> (i % 8))) for i in range(region_count)
        )
        return cls(bits)

    @classmethod
    def zeros(cls, region_count: int) -> "DownsampleMask":
        return cls((False,) * region_count)

    @classmethod
    def ones(cls, region_count: int) -> "DownsampleMask":
        return cls((True,) * region_count)


@dataclass(frozen=True)
class RegionTypeMap:
    """Per-region SBR/CMR/DOR labels, row-major."""

    types: tuple[RegionType, ...]

    @property
    def region_count(self) -> int:
        return len(self.types)


def build_geometry(
    frame_w: int,
    frame_h: int,
    patch_px: int,
    window_patches: int,
    downsample_factor: int,
) -> GridGeometry:
    """Build the decision-region grid for a frame.

    The frame is padded right/bottom to the smallest multiple of the region
    side. Raises ValueError on any non-positive input.
    """
    for name, value in (
        ("frame_w", frame_w),
        ("frame_h", frame_h),
        ("patch_px", patch_px),
        ("window_patches", window_patches),
        ("downsample_factor", downsample_factor),
    ):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")

    r = window_patches * downsample_factor
    region_px = r * patch_px
    cols = -(-frame_w // region_px)  # ceil division
    rows = -(-frame_h // region_px)
    return GridGeometry(
        frame_width_px=frame_w,
        frame_height_px=frame_h,
        patch_px=patch_px,
        window_patches=window_patches,
        downsample_factor=downsample_factor,
        region_patches=r,
        padded_width_px=cols * region_px,
        padded_height_px=rows * region_px,
        grid_cols=cols,
        grid_rows=rows,
        region_count=cols * rows,
    )


def mask_from_types(type_map: RegionTypeMap, tau_d: int) -> DownsampleMask:
    """Generate the downsampling mask for downsampling type ``tau_d``.

    tau_d 0 downsamples nothing, 1 downsamples CMRs, 2 downsamples CMRs and
    SBRs. DOR regions are never marked.
    """
    if tau_d not in DOWNSAMPLE_TARGETS:
        raise ValueError(f"tau_d must be one of {sorted(DOWNSAMPLE_TARGETS)}, got {tau_d!r}")
    targets = DOWNSAMPLE_TARGETS[tau_d]
    return DownsampleMask(tuple(t in targets for t in type_map.types))


def token_count(geom: GridGeometry, mask: DownsampleMask) -> int:
    """Vision tokens of the mixed-resolution frame under ``mask``."""
    if mask.region_count != geom.region_count:
        raise ValueError(
            f"mask has {mask.region_count} regions, geometry has {geom.region_count}"
        )
    n_d = mask.n_downsampled
    full = geom.tokens_per_full_region
    down = geom.tokens_per_downsampled_region
    return (geom.region_count - n_d) * full + n_d * down


def mixed_pixel_count(geom: GridGeometry, mask: DownsampleMask) -> int:
    """Pixels of the mixed-resolution image under ``mask``."""
    if mask.region_count != geom.region_count:
        raise ValueError(
            f"mask has {mask.region_count} regions, geometry has {geom.region_count}"
        )
    n_d = mask.n_downsampled
    full = geom.region_px * geom.region_px
    side = geom.region_px // geom.downsample_factor
    down = side * side
    return (geom.region_count - n_d) * full + n_d * down
