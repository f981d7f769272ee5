"""Deterministic procedural crop generator.

Each crop is a skin-colored background (with low-frequency tonal noise) plus
an anti-aliased elliptical makeup region carrying a linear lightness ramp and
optional near-white speckle highlights. The region boundary is the polygon
through the emitted synthetic landmarks, so the ground-truth mask equals the
landmark-polygon rasterization bit-for-bit and the weak extractors can be
validated against known colors.

Determinism: every random draw descends from (seed, sample index) streams,
so regenerating a dataset yields byte-identical files regardless of call
order or worker count. Sampled base colors are snapped to the 8-bit sRGB
lattice so PNG round trips are exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .color import (
    LabColor,
    delta_e76,
    lab_to_srgb_array,
    srgb_to_lab_array,
)
from .errors import ManifestError, SpecError
from .imgio import ImageTensor, load_mask_png, load_png, quantize_unit, save_mask_png, save_png
from .regions import (
    KIND_EYESHADOW,
    KIND_LIPS,
    SCHEMA_SYNTH,
    SYNTH_POINT_COUNT,
    LandmarkSet,
    RegionMask,
    fill_polygon,
    points_in_polygon,
)

SKIN_TONE_BOX = {"L": (25.0, 80.0), "a": (5.0, 25.0), "b": (10.0, 35.0)}

_SUPERSAMPLE = 4
_FRAME_MARGIN = 2.0
_SPECKLE_LAB = LabColor(95.0, 0.0, 0.0)


@dataclass(frozen=True)
class CropSpec:
    """Everything needed to render one crop deterministically."""

    seed: int
    size: int
    region: str
    skin: LabColor
    makeup: LabColor
    shading: float
    speckle: float
    center: tuple[float, float]
    axes: tuple[float, float]
    rotation: float
    background_noise: float = 0.0

    def validate(self) -> None:
        if self.size < 32:
            raise SpecError(f"crop size {self.size} below minimum 32")
        if self.region not in (KIND_LIPS, KIND_EYESHADOW):
            raise SpecError(f"unknown region kind {self.region!r}")
        if not (0.0 <= self.speckle < 0.5):
            raise SpecError(f"speckle fraction {self.speckle} outside [0, 0.5)")
        if self.shading < 0:
            raise SpecError("shading amplitude must be nonnegative")
        ex, ey = _ellipse_half_extents(self.axes, self.rotation)
        cx, cy = self.center
        if (
            cx - ex < _FRAME_MARGIN
            or cy - ey < _FRAME_MARGIN
            or cx + ex > self.size - _FRAME_MARGIN
            or cy + ey > self.size - _FRAME_MARGIN
        ):
            raise SpecError("ellipse not fully inside frame margins")


@dataclass(frozen=True)
class CropSample:
    image: ImageTensor
    landmarks: LandmarkSet
    gt_makeup: LabColor
    gt_skin: LabColor
    mask: RegionMask
    provenance: CropSpec


def _ellipse_half_extents(axes: tuple[float, float], rot: float) -> tuple[float, float]:
    ax, ay = axes
    ex = float(np.hypot(ax * np.cos(rot), ay * np.sin(rot)))
    ey = float(np.hypot(ax * np.sin(rot), ay * np.cos(rot)))
    return ex, ey


def _boundary_points(spec: CropSpec) -> np.ndarray:
    phi = 2.0 * np.pi * np.arange(SYNTH_POINT_COUNT) / SYNTH_POINT_COUNT
    ax, ay = spec.axes
    local = np.stack([ax * np.cos(phi), ay * np.sin(phi)], axis=1)
    c, s = np.cos(spec.rotation), np.sin(spec.rotation)
    rotated = local @ np.array([[c, s], [-s, c]])
    return rotated + np.asarray(spec.center)


def _snap_lab_to_lattice(lab: LabColor) -> tuple[LabColor, bool]:
    """Quantize through 8-bit sRGB; returns (snapped, was_in_gamut)."""
    rgb, clamped = lab_to_srgb_array(np.array(lab.as_tuple()))
    snapped = srgb_to_lab_array(quantize_unit(rgb))
    return LabColor(*(float(v) for v in snapped)), not bool(clamped)


def _lab_in_gamut(lab: LabColor) -> bool:
    _, clamped = lab_to_srgb_array(np.array(lab.as_tuple()))
    return not bool(clamped)


# Sampler-side recovery margin, strictly inside the documented 1 dE bound.
_RECOVERY_MARGIN = 0.9


def sample_spec(
    rng: np.random.Generator,
    size: int = 64,
    region: str = KIND_LIPS,
    max_shading: float = 8.0,
    max_speckle: float = 0.12,
    background_noise: float = 1.5,
    shading: float | None = None,
    speckle: float | None = None,
) -> CropSpec:
    """Draw a random crop spec.

    Skin tones come from a fixed Lab box spanning light to deep tones;
    makeup colors from the full Lab cube intersected with the sRGB gamut.
    Candidates are rejection-sampled against the rendered crop itself: a
    spec is emitted only if the weak median extractors recover its ground
    truth within the documented bound, so the recovery invariant holds for
    every sampler output by construction (8-bit quantization scatters the
    medians of dark, saturated ramps otherwise).
    """
    for _ in range(1000):
        skin = None
        while skin is None:
            cand = LabColor(
                rng.uniform(*SKIN_TONE_BOX["L"]),
                rng.uniform(*SKIN_TONE_BOX["a"]),
                rng.uniform(*SKIN_TONE_BOX["b"]),
            )
            snapped, ok = _snap_lab_to_lattice(cand)
            if ok and _lab_in_gamut(LabColor(snapped.L + background_noise, snapped.a, snapped.b)) \
                    and _lab_in_gamut(LabColor(snapped.L - background_noise, snapped.a, snapped.b)):
                skin = snapped

        ramp = float(rng.uniform(0.0, max_shading)) if shading is None else float(shading)
        makeup = None
        while makeup is None:
            cand = LabColor(
                rng.uniform(0.0, 100.0),
                rng.uniform(-128.0, 127.0),
                rng.uniform(-128.0, 127.0),
            )
            if not _lab_in_gamut(cand):
                continue
            snapped, ok = _snap_lab_to_lattice(cand)
            if not ok:
                continue
            # 2.5 L* of slack covers the render-time ramp recentering offset.
            hi = LabColor(snapped.L + ramp + 2.5, snapped.a, snapped.b)
            lo = LabColor(snapped.L - ramp - 2.5, snapped.a, snapped.b)
            if _lab_in_gamut(hi) and _lab_in_gamut(lo):
                makeup = snapped

        if region == KIND_LIPS:
            major = rng.uniform(0.24, 0.34) * size
            ratio = rng.uniform(0.45, 0.65)
            cy_frac = rng.uniform(0.45, 0.6)
        else:
            major = rng.uniform(0.26, 0.36) * size
            ratio = rng.uniform(0.28, 0.45)
            cy_frac = rng.uniform(0.3, 0.42)
        axes = (major, major * ratio)
        rotation = float(rng.uniform(-0.25, 0.25))
        ex, ey = _ellipse_half_extents(axes, rotation)
        cx = rng.uniform(_FRAME_MARGIN + ex, size - _FRAME_MARGIN - ex)
        lo_y = max(_FRAME_MARGIN + ey, cy_frac * size - 0.08 * size)
        hi_y = min(size - _FRAME_MARGIN - ey, cy_frac * size + 0.08 * size)
        if lo_y > hi_y:
            lo_y, hi_y = _FRAME_MARGIN + ey, size - _FRAME_MARGIN - ey
        cy = rng.uniform(lo_y, hi_y)

        spec = CropSpec(
            seed=int(rng.integers(0, 2**63 - 1)),
            size=size,
            region=region,
            skin=skin,
            makeup=makeup,
            shading=ramp,
            speckle=float(rng.uniform(0.0, max_speckle)) if speckle is None else float(speckle),
            center=(float(cx), float(cy)),
            axes=(float(axes[0]), float(axes[1])),
            rotation=rotation,
            background_noise=background_noise,
        )
        spec.validate()
        if _recovery_ok(spec):
            return spec
    raise SpecError("no admissible crop spec found after 1000 draws")


def _recovery_ok(spec: CropSpec) -> bool:
    from .regions import weak_makeup_color, weak_skin_color

    sample = render_crop(spec)
    if delta_e76(weak_makeup_color(sample.image, sample.mask), spec.makeup) > _RECOVERY_MARGIN:
        return False
    return delta_e76(weak_skin_color(sample.image, [sample.mask]), spec.skin) <= _RECOVERY_MARGIN


def _low_frequency_field(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    """Bilinear upsampling of a coarse 5x5 offset grid; zero when amplitude is 0."""
    if amplitude == 0.0:
        return np.zeros((size, size))
    grid = rng.uniform(-amplitude, amplitude, size=(5, 5))
    coords = np.linspace(0.0, 4.0, size)
    i0 = np.clip(np.floor(coords).astype(int), 0, 3)
    frac = coords - i0
    rows = grid[i0, :] * (1 - frac)[:, None] + grid[i0 + 1, :] * frac[:, None]
    return rows[:, i0] * (1 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]


def render_crop(spec: CropSpec) -> CropSample:
    """Render a spec to a sample; bit-identical for identical specs."""
    spec.validate()
    size = spec.size
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFF, spec.seed >> 32])
    poly = _boundary_points(spec)
    mask = fill_polygon(poly, (size, size))

    # Coverage via 4x supersampled point-in-polygon on the landmark polygon.
    sub = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE
    xs = (np.arange(size)[:, None] + sub[None, :]).ravel()
    gx, gy = np.meshgrid(xs, xs)  # gx varies along columns, gy along rows
    inside = points_in_polygon(gx.ravel(), gy.ravel(), poly)
    coverage = inside.reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3))

    noise = _low_frequency_field(rng, size, spec.background_noise)
    bg_lab = np.empty((size, size, 3))
    bg_lab[..., 0] = spec.skin.L + noise
    bg_lab[..., 1] = spec.skin.a
    bg_lab[..., 2] = spec.skin.b
    bg_rgb, _ = lab_to_srgb_array(bg_lab)

    # Linear lightness ramp along the major axis: t in [-1, 1] across the region.
    cx, cy = spec.center
    u = np.array([np.cos(spec.rotation), np.sin(spec.rotation)])
    px = np.arange(size) + 0.5
    qx, qy = np.meshgrid(px, px)
    t = np.clip(((qx - cx) * u[0] + (qy - cy) * u[1]) / spec.axes[0], -1.0, 1.0)

    region_idx = np.flatnonzero(mask)
    n_speckle = int(np.floor(spec.speckle * region_idx.size))
    chosen = (
        rng.choice(region_idx, size=n_speckle, replace=False)
        if n_speckle > 0
        else np.empty(0, dtype=int)
    )

    # Recenter the ramp so the region's median lightness (speckles included)
    # stays on the base color; keeps the weak-median recovery bound intact.
    region_l = spec.makeup.L + spec.shading * t.ravel()[region_idx]
    if n_speckle > 0:
        region_l = region_l.copy()
        region_l[np.isin(region_idx, chosen)] = _SPECKLE_LAB.L
    offset = spec.makeup.L - float(np.sort(region_l)[(region_l.size - 1) // 2])

    fg_lab = np.empty((size, size, 3))
    fg_lab[..., 0] = spec.makeup.L + offset + spec.shading * t
    fg_lab[..., 1] = spec.makeup.a
    fg_lab[..., 2] = spec.makeup.b
    fg_rgb, _ = lab_to_srgb_array(fg_lab)

    img = bg_rgb * (1.0 - coverage[..., None]) + fg_rgb * coverage[..., None]
    if n_speckle > 0:
        speckle_rgb, _ = lab_to_srgb_array(np.array(_SPECKLE_LAB.as_tuple()))
        img.reshape(-1, 3)[chosen] = speckle_rgb

    img = quantize_unit(img).astype(np.float32)
    landmarks = LandmarkSet(poly, SCHEMA_SYNTH)
    return CropSample(
        image=ImageTensor(img),
        landmarks=landmarks,
        gt_makeup=spec.makeup,
        gt_skin=spec.skin,
        mask=RegionMask(mask, spec.region),
        provenance=spec,
    )


def _spec_to_json(spec: CropSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["skin"] = list(spec.skin.as_tuple())
    d["makeup"] = list(spec.makeup.as_tuple())
    return d


def _spec_from_json(d: dict) -> CropSpec:
    d = dict(d)
    d["skin"] = LabColor(*d["skin"])
    d["makeup"] = LabColor(*d["makeup"])
    d["center"] = tuple(d["center"])
    d["axes"] = tuple(d["axes"])
    return CropSpec(**d)


def split_of_index(seed: int, index: int, n: int, split_ratio: float) -> str:
    """Deterministic split: rank indices by hash, first round(n*ratio) train."""
    return "train" if _hash_rank(seed, index) < _split_threshold(seed, n, split_ratio) else "test"


def _hash_rank(seed: int, index: int) -> int:
    h = hashlib.sha256(f"{seed}:{index}".encode()).hexdigest()
    return int(h[:16], 16)


def _split_threshold(seed: int, n: int, split_ratio: float) -> int:
    ranks = sorted(_hash_rank(seed, i) for i in range(n))
    n_train = int(round(n * split_ratio))
    if n_train >= n:
        return ranks[-1] + 1
    return ranks[n_train]


def generate_dataset(
    n: int,
    seed: int,
    out_dir: str | Path,
    split_ratio: float = 0.9,
    size: int = 64,
    region: str = KIND_LIPS,
) -> Path:
    """Render ``n`` crops and write images, masks, landmark manifest, truth
    table, and a master manifest. Returns the manifest path."""
    if n < 1:
        raise SpecError("dataset size must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    threshold = _split_threshold(seed, n, split_ratio)
    rows = []
    landmark_lines = []
    truth_lines = ["id\tmakeup_L\tmakeup_a\tmakeup_b\tskin_L\tskin_a\tskin_b"]
    for idx in range(n):
        rng = np.random.default_rng([seed, idx])
        spec = sample_spec(rng, size=size, region=region)
        sample = render_crop(spec)
        sid = f"{idx:06d}"
        image_rel = f"images/{sid}.png"
        mask_rel = f"masks/{sid}.png"
        save_png(sample.image, out / image_rel)
        save_mask_png(sample.mask.mask, out / mask_rel)
        split = "train" if _hash_rank(seed, idx) < threshold else "test"
        rows.append(
            {
                "id": sid,
                "image": image_rel,
                "mask": mask_rel,
                "region": region,
                "split": split,
                "spec": _spec_to_json(spec),
            }
        )
        landmark_lines.append(
            json.dumps(
                {
                    "image": image_rel,
                    "schema": SCHEMA_SYNTH,
                    "points": [round(float(v), 6) for v in sample.landmarks.points.ravel()],
                }
            )
        )
        truth_lines.append(
            sid
            + "\t"
            + "\t".join(
                f"{v:.6f}" for v in (*spec.makeup.as_tuple(), *spec.skin.as_tuple())
            )
        )

    (out / "landmarks.manifest").write_text("\n".join(landmark_lines) + "\n")
    (out / "truth.table").write_text("\n".join(truth_lines) + "\n")
    manifest = {
        "kind": "crops",
        "seed": seed,
        "n": n,
        "size": size,
        "region": region,
        "split_ratio": split_ratio,
        "samples": rows,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(manifest_path: str | Path) -> dict:
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    if "samples" not in manifest:
        raise ManifestError(f"manifest {path} has no samples")
    return manifest


def load_sample(root: Path, row: dict) -> CropSample:
    spec = _spec_from_json(row["spec"])
    image = load_png(root / row["image"])
    mask = RegionMask(load_mask_png(root / row["mask"]), row["region"])
    return CropSample(
        image=image,
        landmarks=LandmarkSet(_boundary_points(spec), SCHEMA_SYNTH),
        gt_makeup=spec.makeup,
        gt_skin=spec.skin,
        mask=mask,
        provenance=spec,
    )


def load_samples(manifest_path: str | Path, split: str | None = None) -> list[CropSample]:
    manifest = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    rows = manifest["samples"]
    if split is not None:
        rows = [r for r in rows if r["split"] == split]
    return [load_sample(root, r) for r in rows]


def generate_triplets(
    n: int,
    seed: int,
    out_dir: str | Path,
    size: int = 64,
    region: str = KIND_LIPS,
    n_candidates: int = 3,
) -> Path:
    """Write style-transfer triplets: reference (person A, makeup m), source
    (person B, makeup m'), and ground-truth candidates (person B geometry and
    landmarks, makeup m) with skin tones perturbed on all but the first."""
    if n < 1:
        raise SpecError("triplet count must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    records = []
    for idx in range(n):
        rng = np.random.default_rng([seed, idx, 7])
        ref_spec = sample_spec(rng, size=size, region=region)
        src_spec = sample_spec(rng, size=size, region=region)
        while delta_e76(src_spec.makeup, ref_spec.makeup) < 5.0:
            src_spec = sample_spec(rng, size=size, region=region)

        tid = f"{idx:06d}"
        entries = {}
        candidates = []
        for name, spec in (("reference", ref_spec), ("source", src_spec)):
            sample = render_crop(spec)
            image_rel = f"images/{tid}_{name}.png"
            mask_rel = f"masks/{tid}_{name}.png"
            save_png(sample.image, out / image_rel)
            save_mask_png(sample.mask.mask, out / mask_rel)
            entries[name] = {
                "image": image_rel,
                "mask": mask_rel,
                "region": region,
                "spec": _spec_to_json(spec),
            }
        for j in range(n_candidates):
            skin = src_spec.skin
            if j > 0:
                delta = rng.uniform(2.0, 6.0)
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                cand_skin = LabColor(
                    skin.L + delta * direction[0],
                    skin.a + delta * direction[1],
                    skin.b + delta * direction[2],
                )
                snapped, ok = _snap_lab_to_lattice(cand_skin)
                if not ok:
                    snapped = skin
                skin = snapped
            cand_spec = dataclasses.replace(src_spec, makeup=ref_spec.makeup, skin=skin)
            sample = render_crop(cand_spec)
            image_rel = f"images/{tid}_gt{j}.png"
            mask_rel = f"masks/{tid}_gt{j}.png"
            save_png(sample.image, out / image_rel)
            save_mask_png(sample.mask.mask, out / mask_rel)
            candidates.append(
                {
                    "image": image_rel,
                    "mask": mask_rel,
                    "region": region,
                    "spec": _spec_to_json(cand_spec),
                }
            )
        records.append(
            {
                "id": tid,
                "reference": entries["reference"],
                "source": entries["source"],
                "candidates": candidates,
            }
        )

    manifest = {"kind": "triplets", "seed": seed, "n": n, "size": size, "samples": records}
    manifest_path = out / "triplets.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path


def load_triplet_entry(root: Path, entry: dict) -> CropSample:
    return load_sample(root, entry)


def validate_dataset(manifest_path: str | Path, makeup_tol: float = 1.0) -> int:
    """Full-scan check: every row loads and satisfies the sample invariants.

    Returns the number of rows checked; raises ManifestError on violation.
    """
    from .regions import weak_makeup_color

    manifest = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    for row in manifest["samples"]:
        sample = load_sample(root, row)
        data = sample.image.data
        if data.min() < 0.0 or data.max() > 1.0:
            raise ManifestError(f"sample {row['id']}: image channels outside [0, 1]")
        if sample.mask.mask.shape != data.shape[:2]:
            raise ManifestError(f"sample {row['id']}: mask/image shape mismatch")
        if sample.provenance.shading <= 8.0:
            got = weak_makeup_color(sample.image, sample.mask)
            if delta_e76(got, sample.gt_makeup) > makeup_tol:
                raise ManifestError(
                    f"sample {row['id']}: weak makeup color off by "
                    f"{delta_e76(got, sample.gt_makeup):.3f} dE"
                )
    return len(manifest["samples"])
