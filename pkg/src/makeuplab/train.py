"""Joint critic/generator optimization loop.

Per optimizer step the critic minimizes its total objective ``critic_steps``
times, then the generator takes one step on its weighted objective. Target
colors are resampled every epoch, uniformly from the weak makeup colors of
the training split. Runs are deterministic per (config, seed) on a single
worker.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .color import LabColor
from .errors import (
    ConfigurationError,
    DatasetQualityError,
    EmptyRegionError,
    ManifestError,
    TrainingDivergedError,
)
from .losses import (
    LossWeights,
    TrainBatch,
    critic_losses,
    generator_losses,
    make_batch,
    max_scales_for,
)
from .models import ArchSpec, ModelParams, init_params, save_checkpoint
from .regions import KIND_EYESHADOW, KIND_LIPS, eye_region_mask, lip_region_mask, weak_makeup_color, weak_skin_color
from .synth import load_manifest, load_sample

REGION_LIPS = "lips"
REGION_EYES = "eyes"
REGION_JOINT = "joint"

_MAX_WEAK_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class TrainConfig:
    manifests: tuple[str, ...]
    out_dir: str
    region: str = REGION_LIPS
    crop_size: int = 64
    epochs: int = 200
    batch_size: int = 16
    critic_steps: int = 1
    lr_d: float = 1e-3
    lr_g: float = 3e-3
    beta1: float = 0.5
    beta2: float = 0.9
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 keeps only the final
    color_space: str = "lab"
    use_bg_loss: bool = True
    arch: ArchSpec = field(default_factory=ArchSpec)
    # Critic-only epochs before generator updates start: the color/background
    # heads must be sensible before their gradients steer the generator, or
    # the early updates push it into saturation the cycle loss cannot undo.
    critic_warmup_epochs: int = 2

    def validate(self) -> None:
        if not self.manifests:
            raise ConfigurationError("at least one dataset manifest is required")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.region not in (REGION_LIPS, REGION_EYES, REGION_JOINT):
            raise ConfigurationError(f"unknown region kind {self.region!r}")
        if self.color_space not in ("lab", "rgb"):
            raise ConfigurationError(f"unknown color space {self.color_space!r}")
        self.arch.validate()

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["manifests"] = list(self.manifests)
        return d


@dataclass
class TrainData:
    """Training-split crops with precomputed weak labels."""

    ids: list[str]
    images: np.ndarray  # (n, H, W, 3) unit range
    makeup: np.ndarray  # (n, 3) Lab
    skin: np.ndarray  # (n, 3) Lab
    skipped: list[str]

    @property
    def pool(self) -> np.ndarray:
        return self.makeup


def _mask_for(sample, row_region: str):
    dims = sample.image.data.shape[:2]
    if row_region == KIND_LIPS:
        return lip_region_mask(sample.landmarks, dims)
    return eye_region_mask(sample.landmarks, dims)


def load_train_data(config: TrainConfig) -> TrainData:
    """Load the train split and extract weak labels; samples whose extraction
    fails are skipped and counted (more than 5% failing is a dataset error).

    The split membership comes from the manifest (decided at generation time),
    so no test-split pixel ever contributes a weak label.
    """
    ids, images, makeup, skin, skipped = [], [], [], [], []
    for manifest_path in config.manifests:
        manifest = load_manifest(manifest_path)
        root = Path(manifest_path).parent
        for row in manifest["samples"]:
            if row["split"] != "train":
                continue
            if config.region != REGION_JOINT:
                expect = KIND_LIPS if config.region == REGION_LIPS else KIND_EYESHADOW
                if row["region"] != expect:
                    raise ManifestError(
                        f"sample {row['id']} has region {row['region']!r}, "
                        f"but the run is configured for {config.region!r}"
                    )
            sample = load_sample(root, row)
            if sample.image.data.shape[:2] != (config.crop_size, config.crop_size):
                raise ManifestError(
                    f"sample {row['id']} size {sample.image.data.shape[:2]} "
                    f"does not match configured crop size {config.crop_size}"
                )
            try:
                mask = _mask_for(sample, row["region"])
                c_m = weak_makeup_color(sample.image, mask)
                c_s = weak_skin_color(sample.image, [mask])
            except EmptyRegionError:
                skipped.append(row["id"])
                continue
            ids.append(row["id"])
            images.append(sample.image.data)
            makeup.append(c_m.as_tuple())
            skin.append(c_s.as_tuple())
    total = len(ids) + len(skipped)
    if total == 0:
        raise ConfigurationError("no training samples in the given manifests")
    if len(skipped) > _MAX_WEAK_FAILURE_FRACTION * total:
        raise DatasetQualityError(
            f"weak extraction failed for {len(skipped)}/{total} samples"
        )
    return TrainData(
        ids=ids,
        images=np.stack(images),
        makeup=np.array(makeup, dtype=np.float64),
        skin=np.array(skin, dtype=np.float64),
        skipped=skipped,
    )


def sample_target_colors(pool: np.ndarray, n: int, epoch_index: int, seed: int) -> np.ndarray:
    """Uniform draws (with replacement) from the weak color pool; the
    assignment is a pure function of (seed, epoch_index)."""
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise ConfigurationError("target color pool is empty")
    rng = np.random.default_rng([seed, epoch_index, 0x7A26])
    return pool[rng.integers(0, pool.shape[0], size=n)]


def _check_finite(parts: dict[str, torch.Tensor], record: dict) -> None:
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise TrainingDivergedError(
                f"loss component {name!r} is not finite at step {record['step']}",
                record=record,
            )


def critic_only_step(
    batch: TrainBatch,
    params: ModelParams,
    opt_d: torch.optim.Optimizer,
    config: TrainConfig,
    rng: torch.Generator,
) -> dict:
    """Warm-up update: critic objective only, generator untouched."""
    G, D = params.generator, params.discriminator
    D.train()
    record: dict = {"step": params.step, "size": batch.size, "warmup": True}
    for p in G.parameters():
        p.requires_grad_(False)
    d_parts = critic_losses(
        batch, G, D, config.weights, rng,
        color_space=config.color_space, use_bg=config.use_bg_loss,
    )
    _check_finite(d_parts, record)
    opt_d.zero_grad(set_to_none=True)
    d_parts["total"].backward()
    opt_d.step()
    for p in G.parameters():
        p.requires_grad_(True)
    scalar = lambda t: float(t.detach())
    record.update(
        d_adv=scalar(d_parts["adv"]), d_gp=scalar(d_parts["gp"]),
        d_color=scalar(d_parts["color"]), d_bg=scalar(d_parts["bg"]),
        d_total=scalar(d_parts["total"]),
    )
    params.step += 1
    record["wall"] = time.time()
    return record


def train_step(
    batch: TrainBatch,
    params: ModelParams,
    opt_state: tuple[torch.optim.Optimizer, torch.optim.Optimizer],
    config: TrainConfig,
    rng: torch.Generator,
) -> tuple[ModelParams, tuple, dict]:
    """One optimization step: ``critic_steps`` critic updates, then one
    generator update. Parameters and optimizer state update in place; the
    returned record holds every loss component."""
    opt_d, opt_g = opt_state
    G, D = params.generator, params.discriminator
    G.train()
    D.train()
    scales = max_scales_for(config.crop_size)
    record: dict = {"step": params.step, "size": batch.size}

    for p in G.parameters():
        p.requires_grad_(False)
    for _ in range(max(1, config.critic_steps)):
        d_parts = critic_losses(
            batch, G, D, config.weights, rng,
            color_space=config.color_space, use_bg=config.use_bg_loss,
        )
        _check_finite(d_parts, record)
        opt_d.zero_grad(set_to_none=True)
        d_parts["total"].backward()
        opt_d.step()
    for p in G.parameters():
        p.requires_grad_(True)

    for p in D.parameters():
        p.requires_grad_(False)
    g_parts = generator_losses(
        batch, G, D, config.weights,
        color_space=config.color_space, use_bg=config.use_bg_loss, scales=scales,
    )
    _check_finite(g_parts, record)
    opt_g.zero_grad(set_to_none=True)
    g_parts["total"].backward()
    opt_g.step()
    for p in D.parameters():
        p.requires_grad_(True)

    scalar = lambda t: float(t.detach())
    record.update(
        d_adv=scalar(d_parts["adv"]), d_gp=scalar(d_parts["gp"]),
        d_color=scalar(d_parts["color"]), d_bg=scalar(d_parts["bg"]),
        d_total=scalar(d_parts["total"]),
        g_adv=scalar(g_parts["adv"]), g_color=scalar(g_parts["color"]),
        g_bg=scalar(g_parts["bg"]), g_cycle=scalar(g_parts["cycle"]),
        g_total=scalar(g_parts["total"]),
    )
    params.step += 1
    record["wall"] = time.time()
    return params, opt_state, record


def train(config: TrainConfig, data: TrainData | None = None) -> tuple[Path, Path]:
    """Run the full schedule; returns (final checkpoint path, log path)."""
    config.validate()
    torch.manual_seed(config.seed)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = load_train_data(config)
    n = len(data.ids)

    params = init_params(config.arch, config.seed)
    opt_d = torch.optim.Adam(
        params.discriminator.parameters(), lr=config.lr_d,
        betas=(config.beta1, config.beta2),
    )
    opt_g = torch.optim.Adam(
        params.generator.parameters(), lr=config.lr_g,
        betas=(config.beta1, config.beta2),
    )
    gp_rng = torch.Generator().manual_seed(config.seed ^ 0x5EED)

    log_path = out / "train_log.jsonl"
    extras = {
        "config": config.to_json(),
        "crop_size": config.crop_size,
        "color_space": config.color_space,
        "region": config.region,
    }
    with log_path.open("w") as log:
        log.write(json.dumps({
            "type": "config", **extras,
            "train_ids": data.ids, "skipped_ids": data.skipped,
        }) + "\n")
        for epoch in range(config.epochs):
            warmup = epoch < config.critic_warmup_epochs
            order = np.random.default_rng([config.seed, epoch, 0x0D0E]).permutation(n)
            targets = sample_target_colors(data.pool, n, epoch, config.seed)
            sums: dict[str, float] = {}
            count = 0
            for start in range(0, n, config.batch_size):
                chunk = order[start : start + config.batch_size]
                batch = make_batch(
                    data.images[chunk], data.makeup[chunk],
                    data.skin[chunk], targets[chunk],
                )
                if warmup:
                    record = critic_only_step(batch, params, opt_d, config, gp_rng)
                else:
                    params, _, record = train_step(
                        batch, params, (opt_d, opt_g), config, gp_rng
                    )
                log.write(json.dumps({"type": "step", "epoch": epoch, **record}) + "\n")
                for key in ("d_total", "g_total", "g_color", "g_cycle", "g_bg", "d_color"):
                    if key in record:
                        sums[key] = sums.get(key, 0.0) + record[key]
                count += 1
            log.write(json.dumps({
                "type": "epoch", "epoch": epoch, "warmup": warmup,
                **{f"mean_{k}": v / count for k, v in sums.items()},
            }) + "\n")
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(params, out / f"checkpoint_{epoch + 1:04d}.pt", extras)

    final_path = out / "checkpoint_final.pt"
    save_checkpoint(params, final_path, extras)
    return final_path, log_path


def load_train_log(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def pool_as_labcolors(pool: np.ndarray) -> list[LabColor]:
    return [LabColor(*row) for row in np.asarray(pool, dtype=float)]
