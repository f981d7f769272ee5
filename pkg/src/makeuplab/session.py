"""Inference façade over trained checkpoints.

Resize policy (shared by every entry point, and documented for UI parity):
inputs are center-cropped to a square, bilinearly resized to the model's
training size, processed, resized back, and pasted over the source pixels,
so output dimensions always equal input dimensions.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .color import (
    LabColor,
    delta_e76,
    is_in_gamut,
    srgb_to_lab_array,
)
from .errors import ConfigurationError, InputDomainError
from .imgio import ImageTensor, from_pil, to_pil
from .models import (
    ModelParams,
    discriminator_forward,
    generator_forward,
    load_checkpoint,
    load_checkpoint_extras,
)

DEFAULT_REGION = "lips"


@dataclass(frozen=True)
class CatalogEntry:
    shade_id: str
    name: str
    color: LabColor


@dataclass(frozen=True)
class ShadeCatalog:
    entries: tuple[CatalogEntry, ...]
    source: str = ""

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.shade_id in seen:
                raise ConfigurationError(f"duplicate shade id {e.shade_id!r}")
            seen.add(e.shade_id)
            if not is_in_gamut(e.color):
                raise ConfigurationError(
                    f"catalog color for {e.shade_id!r} is outside the sRGB gamut"
                )


def load_catalog(path: str | Path) -> ShadeCatalog:
    """Catalog file: one tab-separated record per line: id, name, L, a, b."""
    entries = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ConfigurationError(f"{path}:{line_no}: expected 5 tab-separated fields")
        sid, name, L, a, b = parts
        entries.append(CatalogEntry(sid, name, LabColor(float(L), float(a), float(b))))
    return ShadeCatalog(tuple(entries), source=str(path))


def save_catalog(catalog: ShadeCatalog, path: str | Path) -> None:
    lines = [
        f"{e.shade_id}\t{e.name}\t{e.color.L:.4f}\t{e.color.a:.4f}\t{e.color.b:.4f}"
        for e in catalog.entries
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def recommend_shade(
    color: LabColor, catalog: ShadeCatalog, top_k: int = 5
) -> list[tuple[CatalogEntry, float]]:
    """Catalog entries ranked by dE76 to the query, ascending; ties break on id."""
    if not catalog.entries:
        raise ConfigurationError("cannot recommend from an empty catalog")
    ranked = sorted(
        ((e, delta_e76(color, e.color)) for e in catalog.entries),
        key=lambda pair: (pair[1], pair[0].shade_id),
    )
    return ranked[: max(0, top_k)] if top_k is not None else ranked


@dataclass(frozen=True)
class SessionConfig:
    checkpoints: dict[str, str]  # region kind -> checkpoint path
    catalog_path: str | None = None
    max_upload_bytes: int = 4 * 1024 * 1024


@dataclass
class _LoadedModel:
    params: ModelParams
    input_size: int
    color_space: str


class InferenceSession:
    """Holds immutable model weights per region kind; safe for concurrent use."""

    def __init__(self, config: SessionConfig):
        if not config.checkpoints:
            raise ConfigurationError("at least one checkpoint is required")
        self.config = config
        self.models: dict[str, _LoadedModel] = {}
        for region, path in config.checkpoints.items():
            extras = load_checkpoint_extras(path)
            self.models[region] = _LoadedModel(
                params=load_checkpoint(path),
                input_size=int(extras.get("crop_size", 64)),
                color_space=str(extras.get("color_space", "lab")),
            )
        self.catalog = (
            load_catalog(config.catalog_path) if config.catalog_path else ShadeCatalog(())
        )
        self._lock = threading.Lock()
        self.request_counts: dict[str, int] = {}

    def _count(self, op: str) -> None:
        with self._lock:
            self.request_counts[op] = self.request_counts.get(op, 0) + 1

    def _model(self, region: str | None) -> _LoadedModel:
        region = region or DEFAULT_REGION
        if region not in self.models:
            raise InputDomainError(
                f"no model loaded for region {region!r}; have {sorted(self.models)}"
            )
        return self.models[region]

    @staticmethod
    def _center_square(img: ImageTensor) -> tuple[ImageTensor, tuple[int, int, int]]:
        data = img.to_unit().data
        h, w = data.shape[:2]
        side = min(h, w)
        top = (h - side) // 2
        left = (w - side) // 2
        return ImageTensor(data[top : top + side, left : left + side]), (top, left, side)

    @staticmethod
    def _resize(img: ImageTensor, side: int) -> ImageTensor:
        if img.height == side and img.width == side:
            return img
        pim = to_pil(img).resize((side, side), Image.BILINEAR)
        return from_pil(pim)

    def _prepare(self, img: ImageTensor, model: _LoadedModel):
        square, box = self._center_square(img)
        return self._resize(square, model.input_size), box

    def estimate_color(self, image: ImageTensor, region: str | None = None) -> LabColor:
        """Denormalized color-regression head output on the prepared crop."""
        self._count("estimate")
        model = self._model(region)
        prepared, _ = self._prepare(image, model)
        _, color, _ = discriminator_forward(model.params, prepared.to_signed())
        if model.color_space == "rgb":
            # rgb-mode heads emit [0,1] sRGB mapped from the tanh range
            norm = np.array(
                [(color.L / 50.0 - 1.0), (2 * color.a + 1) / 255.0, (2 * color.b + 1) / 255.0]
            )
            rgb = np.clip((norm + 1.0) / 2.0, 0.0, 1.0)
            lab = srgb_to_lab_array(rgb)
            return LabColor(*(float(v) for v in lab))
        return color

    def synthesize(
        self, image: ImageTensor, target: LabColor, region: str | None = None
    ) -> ImageTensor:
        """Generator output mapped back to [0,1], pasted over the source crop."""
        self._count("synthesize")
        if not (0.0 <= target.L <= 100.0 and -128.0 <= target.a <= 127.0
                and -128.0 <= target.b <= 127.0):
            raise InputDomainError(f"target {target} outside the Lab control ranges")
        model = self._model(region)
        prepared, (top, left, side) = self._prepare(image, model)
        out = generator_forward(model.params, prepared.to_signed(), target).to_unit()
        restored = self._resize(out, side)
        full = image.to_unit().data.copy()
        full[top : top + side, left : left + side] = restored.data
        return ImageTensor(full)

    def transfer(
        self, source: ImageTensor, reference: ImageTensor, region: str | None = None
    ) -> tuple[ImageTensor, LabColor]:
        """Estimate the reference's makeup color, then synthesize it onto the
        source; the estimate is returned as the user-editable handle."""
        self._count("transfer")
        estimated = self.estimate_color(reference, region)
        return self.synthesize(source, estimated, region), estimated

    def recommend(self, color: LabColor, top_k: int = 5):
        self._count("recommend")
        return recommend_shade(color, self.catalog, top_k)
