"""Weak color features: landmark-derived region masks and median extractors.

The makeup color of a crop is estimated as the per-channel (marginal) median,
in Lab, over a fixed region built from facial landmarks; the skin color as
the same median over the complement of the makeup regions. Both are noisy by
design: they are weak labels, not ground truth.

Rasterization fill rule: a pixel belongs to a polygon iff its center
(col + 0.5, row + 0.5) is inside under the even-odd rule, with half-open
edge handling (top/left edges in, bottom/right out), so shared borders never
double-fill and results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import LabColor, srgb_to_lab_array
from .errors import EmptyRegionError, SchemaError
from .imgio import ImageTensor

SCHEMA_DLIB68 = "dlib68"
SCHEMA_SYNTH = "synth"

# Point count of the synthetic schema: evenly spaced samples of the region
# boundary, emitted by the procedural crop generator.
SYNTH_POINT_COUNT = 24

KIND_LIPS = "lips"
KIND_EYESHADOW = "eyeshadow"
KIND_BACKGROUND = "background"

# dlib 68-point indices.
_OUTER_LIP = list(range(48, 60))
_INNER_MOUTH = list(range(60, 68))
_LEFT_EYE = list(range(36, 42))
_RIGHT_EYE = list(range(42, 48))
_LEFT_UPPER_ARC = [36, 37, 38, 39]
_RIGHT_UPPER_ARC = [42, 43, 44, 45]

DEFAULT_EYE_BAND_SCALE = 0.6


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered (x, y) pixel coordinates plus the schema they follow."""

    points: np.ndarray
    schema: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise SchemaError(f"expected (N, 2) points, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.schema == SCHEMA_DLIB68:
            required = 68
        elif self.schema == SCHEMA_SYNTH:
            required = SYNTH_POINT_COUNT
        else:
            raise SchemaError(f"unknown landmark schema {self.schema!r}")
        if pts.shape[0] != required:
            raise SchemaError(
                f"schema {self.schema!r} requires {required} points, got {pts.shape[0]}"
            )

    def out_of_frame(self, dims: tuple[int, int]) -> np.ndarray:
        """Indices of points outside the (height, width) frame."""
        h, w = dims
        x, y = self.points[:, 0], self.points[:, 1]
        return np.nonzero((x < 0) | (x > w) | (y < 0) | (y > h))[0]


@dataclass(frozen=True)
class RegionMask:
    """Binary H x W mask tagged with the region kind it selects."""

    mask: np.ndarray
    kind: str = KIND_LIPS

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", m)
        if m.ndim != 2:
            raise SchemaError(f"expected 2-D mask, got shape {m.shape}")
        if self.kind not in (KIND_LIPS, KIND_EYESHADOW, KIND_BACKGROUND):
            raise SchemaError(f"unknown region kind {self.kind!r}")

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())


def fill_polygon(points: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Rasterize a polygon to a boolean (height, width) mask.

    Even-odd rule evaluated at pixel centers; shared by the weak extractors
    and the synthetic renderer so both agree bit-for-bit.
    """
    h, w = dims
    pts = np.asarray(points, dtype=np.float64)
    out = np.zeros((h, w), dtype=bool)
    if len(pts) < 3:
        return out
    cx = np.arange(w, dtype=np.float64) + 0.5
    cy = np.arange(h, dtype=np.float64) + 0.5
    inside = points_in_polygon(
        np.repeat(cx[None, :], h, axis=0).ravel(),
        np.repeat(cy[:, None], w, axis=1).ravel(),
        pts,
    )
    return inside.reshape(h, w)


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over query points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _region_polygon(lm: LandmarkSet) -> np.ndarray:
    # Synth schema landmarks trace the single makeup region boundary directly.
    return lm.points


def lip_region_mask(lm: LandmarkSet, dims: tuple[int, int]) -> RegionMask:
    """Fixed lip region: outer-lip polygon minus the inner-mouth polygon."""
    if lm.schema == SCHEMA_SYNTH:
        mask = fill_polygon(_region_polygon(lm), dims)
    else:
        outer = fill_polygon(lm.points[_OUTER_LIP], dims)
        inner = fill_polygon(lm.points[_INNER_MOUTH], dims)
        mask = outer & ~inner
    if not mask.any():
        raise EmptyRegionError("lip region rasterized to zero pixels")
    return RegionMask(mask, KIND_LIPS)


def eye_region_mask(
    lm: LandmarkSet,
    dims: tuple[int, int],
    band_scale: float = DEFAULT_EYE_BAND_SCALE,
) -> RegionMask:
    """Eye-shadow region: a band extending upward from each upper-eyelid arc
    by ``band_scale`` of the eye's horizontal extent, minus the eyeball."""
    if lm.schema == SCHEMA_SYNTH:
        mask = fill_polygon(_region_polygon(lm), dims)
    else:
        mask = np.zeros(dims, dtype=bool)
        for eye_idx, arc_idx in ((_LEFT_EYE, _LEFT_UPPER_ARC), (_RIGHT_EYE, _RIGHT_UPPER_ARC)):
            eye = lm.points[eye_idx]
            arc = lm.points[arc_idx]
            extent = float(eye[:, 0].max() - eye[:, 0].min())
            if extent <= 0:
                continue
            lifted = arc.copy()
            lifted[:, 1] -= band_scale * extent
            band_poly = np.concatenate([arc, lifted[::-1]], axis=0)
            band = fill_polygon(band_poly, dims)
            band &= ~fill_polygon(eye, dims)
            mask |= band
    if not mask.any():
        raise EmptyRegionError("eye-shadow region rasterized to zero pixels")
    return RegionMask(mask, KIND_EYESHADOW)


def _marginal_median(values: np.ndarray) -> np.ndarray:
    """Per-channel median over an (N, 3) array, lower-of-two on even counts."""
    order = np.sort(values, axis=0)
    return order[(values.shape[0] - 1) // 2]


def weak_makeup_color(img: ImageTensor, mask: RegionMask) -> LabColor:
    """C_m: marginal Lab median over the masked pixels."""
    unit = img.to_unit()
    if mask.mask.shape != unit.data.shape[:2]:
        raise EmptyRegionError(
            f"mask shape {mask.mask.shape} does not match image {unit.data.shape[:2]}"
        )
    pixels = unit.data[mask.mask]
    if pixels.size == 0:
        raise EmptyRegionError("cannot take the median of an empty region")
    med = _marginal_median(srgb_to_lab_array(pixels))
    return LabColor(float(med[0]), float(med[1]), float(med[2]))


def weak_skin_color(img: ImageTensor, makeup_masks: list[RegionMask]) -> LabColor:
    """C_s: marginal Lab median over the complement of the makeup masks."""
    unit = img.to_unit()
    keep = np.ones(unit.data.shape[:2], dtype=bool)
    for m in makeup_masks:
        if m.mask.shape != keep.shape:
            raise EmptyRegionError(
                f"mask shape {m.mask.shape} does not match image {keep.shape}"
            )
        keep &= ~m.mask
    pixels = unit.data[keep]
    if pixels.size == 0:
        raise EmptyRegionError("makeup masks cover the whole image")
    med = _marginal_median(srgb_to_lab_array(pixels))
    return LabColor(float(med[0]), float(med[1]), float(med[2]))


def background_mask(makeup_masks: list[RegionMask], dims: tuple[int, int]) -> RegionMask:
    keep = np.ones(dims, dtype=bool)
    for m in makeup_masks:
        keep &= ~m.mask
    return RegionMask(keep, KIND_BACKGROUND)
