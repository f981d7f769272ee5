"""CIE Lab color core: sRGB<->Lab conversion, dE76, and Lab normalization.

All conversions assume sRGB primaries with a D65 white point (2 degree
observer) and are computed in double precision. Scalar entry points operate
on :class:`RGBColor` / :class:`LabColor`; the ``*_array`` variants accept
``(..., 3)`` numpy arrays and are what the image-level code paths use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputDomainError

# Linear sRGB -> XYZ (D65). White point taken as the row sums so that
# sRGB white maps to exactly (100, 0, 0).
_RGB_TO_XYZ = np.array(
    [
        [0.41239079926595934, 0.35758433938387796, 0.18048078840183429],
        [0.21263900587151027, 0.71516867876775593, 0.07219231536073371],
        [0.01933081871559182, 0.11919477979462598, 0.95053215224966058],
    ],
    dtype=np.float64,
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = _RGB_TO_XYZ @ np.ones(3)

_DELTA = 6.0 / 29.0

L_RANGE = (0.0, 100.0)
AB_RANGE = (-128.0, 127.0)


@dataclass(frozen=True)
class RGBColor:
    """Gamma-encoded sRGB color with channels in [0, 1]."""

    r: float
    g: float
    b: float

    def __post_init__(self):
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or not math.isfinite(v):
                raise InputDomainError(f"sRGB channel {name}={v!r} outside [0, 1]")

    @classmethod
    def from_8bit(cls, r: int, g: int, b: int) -> "RGBColor":
        return cls(r / 255, g / 255, b / 255)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.r, self.g, self.b)


@dataclass(frozen=True)
class LabColor:
    """CIE L*a*b* color. L in [0, 100]; a, b nominally in [-128, 127]."""

    L: float
    a: float
    b: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.L, self.a, self.b)


def _linearize(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _delinearize(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1 / 2.4) - 0.055)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def srgb_to_lab_array(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) array of sRGB values in [0, 1] to Lab."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise InputDomainError(f"expected (..., 3) array, got shape {rgb.shape}")
    xyz = _linearize(rgb) @ _RGB_TO_XYZ.T
    fxyz = _f(xyz / _WHITE)
    lab = np.empty_like(fxyz)
    lab[..., 0] = 116.0 * fxyz[..., 1] - 16.0
    lab[..., 1] = 500.0 * (fxyz[..., 0] - fxyz[..., 1])
    lab[..., 2] = 200.0 * (fxyz[..., 1] - fxyz[..., 2])
    return lab


def lab_to_srgb_array(lab: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse conversion; returns (rgb, clamped) where ``clamped`` marks
    entries whose result fell outside [0, 1] before per-channel clamping."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.shape[-1] != 3:
        raise InputDomainError(f"expected (..., 3) array, got shape {lab.shape}")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _f_inv(np.stack([fx, fy, fz], axis=-1)) * _WHITE
    lin = xyz @ _XYZ_TO_RGB.T
    rgb = _delinearize(lin)
    # tolerance keeps float noise at the gamut boundary from flagging
    clamped = np.any((rgb < -1e-8) | (rgb > 1.0 + 1e-8), axis=-1)
    return np.clip(rgb, 0.0, 1.0), clamped


def srgb_to_lab(c: RGBColor) -> LabColor:
    lab = srgb_to_lab_array(np.array(c.as_tuple()))
    return LabColor(float(lab[0]), float(lab[1]), float(lab[2]))


def lab_to_srgb(c: LabColor) -> tuple[RGBColor, bool]:
    """Convert to sRGB, clamping out-of-gamut results per channel.

    Returns the color and a flag that is True when clamping occurred.
    """
    rgb, clamped = lab_to_srgb_array(np.array(c.as_tuple()))
    return RGBColor(float(rgb[0]), float(rgb[1]), float(rgb[2])), bool(clamped)


def is_in_gamut(c: LabColor) -> bool:
    _, clamped = lab_to_srgb(c)
    return not clamped


def delta_e76(p: LabColor, q: LabColor) -> float:
    """CIE 1976 color difference: Euclidean distance in Lab."""
    return math.sqrt((p.L - q.L) ** 2 + (p.a - q.a) ** 2 + (p.b - q.b) ** 2)


def lab_sq_error(p: LabColor, q: LabColor) -> float:
    """Squared L2 norm in Lab; equals delta_e76(p, q) ** 2."""
    return (p.L - q.L) ** 2 + (p.a - q.a) ** 2 + (p.b - q.b) ** 2


def normalize_lab(c: LabColor) -> tuple[float, float, float]:
    """Affine map L:[0,100] -> [-1,1], a/b:[-128,127] -> [-1,1]."""
    return (
        c.L / 50.0 - 1.0,
        (2.0 * c.a + 1.0) / 255.0,
        (2.0 * c.b + 1.0) / 255.0,
    )


def denormalize_lab(t: tuple[float, float, float]) -> LabColor:
    """Exact inverse of :func:`normalize_lab`."""
    nl, na, nb = t
    return LabColor(50.0 * (nl + 1.0), (255.0 * na - 1.0) / 2.0, (255.0 * nb - 1.0) / 2.0)


def normalize_lab_array(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    out = np.empty_like(lab)
    out[..., 0] = lab[..., 0] / 50.0 - 1.0
    out[..., 1] = (2.0 * lab[..., 1] + 1.0) / 255.0
    out[..., 2] = (2.0 * lab[..., 2] + 1.0) / 255.0
    return out


def denormalize_lab_array(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    out[..., 0] = 50.0 * (t[..., 0] + 1.0)
    out[..., 1] = (255.0 * t[..., 1] - 1.0) / 2.0
    out[..., 2] = (255.0 * t[..., 2] - 1.0) / 2.0
    return out
