"""Image container and PNG I/O.

Images are H x W x 3 float arrays; the carried ``domain`` tag makes the
value range explicit: ``"unit"`` is gamma-encoded sRGB in [0, 1], ``"signed"``
is the network range [-1, 1]. All files on disk are 8-bit sRGB PNG.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ShapeError

UNIT = "unit"
SIGNED = "signed"


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray
    domain: str = UNIT

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ShapeError(f"expected HxWx3 image, got shape {self.data.shape}")
        if self.domain not in (UNIT, SIGNED):
            raise ShapeError(f"unknown image domain {self.domain!r}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_unit(self) -> "ImageTensor":
        if self.domain == UNIT:
            return self
        return ImageTensor(np.clip((self.data + 1.0) / 2.0, 0.0, 1.0), UNIT)

    def to_signed(self) -> "ImageTensor":
        if self.domain == SIGNED:
            return self
        return ImageTensor(self.data * 2.0 - 1.0, SIGNED)


def quantize_unit(data: np.ndarray) -> np.ndarray:
    """Round a [0, 1] array onto the 8-bit lattice (round-half-away like PIL)."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def to_pil(img: ImageTensor) -> Image.Image:
    unit = img.to_unit().data
    return Image.fromarray(np.floor(unit * 255.0 + 0.5).astype(np.uint8), mode="RGB")


def from_pil(pim: Image.Image) -> ImageTensor:
    arr = np.asarray(pim.convert("RGB"), dtype=np.float32) / 255.0
    return ImageTensor(arr.astype(np.float32), UNIT)


def save_png(img: ImageTensor, path: str | Path) -> None:
    to_pil(img).save(Path(path), format="PNG")


def load_png(path: str | Path) -> ImageTensor:
    try:
        with Image.open(Path(path)) as pim:
            return from_pil(pim)
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeError(f"cannot decode image at {path}: {e}") from e


def encode_png(img: ImageTensor) -> bytes:
    buf = io.BytesIO()
    to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(blob: bytes) -> ImageTensor:
    try:
        with Image.open(io.BytesIO(blob)) as pim:
            return from_pil(pim)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DecodeError(f"cannot decode image payload: {e}") from e


def save_mask_png(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        Path(path), format="PNG"
    )


def load_mask_png(path: str | Path) -> np.ndarray:
    try:
        with Image.open(Path(path)) as pim:
            return np.asarray(pim.convert("L")) >= 128
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeError(f"cannot decode mask at {path}: {e}") from e
