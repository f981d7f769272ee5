"""Conditional generator and multi-head critic.

The generator consumes the source crop with the target color broadcast as
three constant planes, and emits a bounded pixel difference that is added to
the source (identity when the residual branch is zero). The critic is a
PatchGAN-style fully convolutional trunk (no normalization, for gradient
penalty compatibility) with three heads: an unbounded spatial realism map,
and bounded makeup/background color regressors whose tanh outputs live in
normalized Lab.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .color import LabColor, denormalize_lab, normalize_lab
from .errors import CheckpointError, ShapeError, SpecError
from .imgio import SIGNED, ImageTensor

CHECKPOINT_MAGIC = "makeuplab-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; the generator keeps a constant channel width.

    ``down_stages`` strided 4x4 convolutions halve the resolution before the
    residual stack; every residual block is two 4x4 convolutions plus a skip
    connection; the same number of upsampling stages restores the input size.
    """

    base_width: int = 16
    down_stages: int = 2
    res_blocks: int = 4
    disc_depth: int = 4
    neg_slope: float = 0.2
    gen_norm: str = "none"
    disc_norm: str = "none"

    def validate(self) -> None:
        if self.base_width < 1 or self.down_stages < 0 or self.res_blocks < 0:
            raise SpecError(f"invalid architecture: {self}")
        if self.disc_depth < 1:
            raise SpecError("discriminator needs at least one layer")
        if self.gen_norm not in ("instance", "none") or self.disc_norm not in ("instance", "none"):
            raise SpecError(f"unknown normalization kind in {self}")

    @property
    def stride_factor(self) -> int:
        return 2**self.down_stages


@dataclass
class ModelParams:
    """Generator + discriminator weights plus their architecture descriptor."""

    generator: "Generator"
    discriminator: "Discriminator"
    arch: ArchSpec
    step: int = 0


def _pad_same_4x4() -> nn.Module:
    # 4x4 kernels need asymmetric padding to preserve spatial size at stride 1.
    return nn.ZeroPad2d((1, 2, 1, 2))


def _norm(kind: str, width: int) -> nn.Module:
    if kind == "instance":
        return nn.InstanceNorm2d(width, affine=True)
    return nn.Identity()


class ResidualBlock(nn.Module):
    """Two 4x4 convolutions with a skip connection."""

    def __init__(self, width: int, neg_slope: float, norm: str):
        super().__init__()
        self.body = nn.Sequential(
            _pad_same_4x4(),
            nn.Conv2d(width, width, 4),
            _norm(norm, width),
            nn.LeakyReLU(neg_slope),
            _pad_same_4x4(),
            nn.Conv2d(width, width, 4),
            _norm(norm, width),
        )
        self.act = nn.LeakyReLU(neg_slope)

    def forward(self, x):
        return self.act(x + self.body(x))


class Generator(nn.Module):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        arch.validate()
        self.arch = arch
        w = arch.base_width
        layers: list[nn.Module] = [
            _pad_same_4x4(),
            nn.Conv2d(6, w, 4),
            _norm(arch.gen_norm, w),
            nn.LeakyReLU(arch.neg_slope),
        ]
        for _ in range(arch.down_stages):
            layers += [
                nn.Conv2d(w, w, 4, stride=2, padding=1),
                _norm(arch.gen_norm, w),
                nn.LeakyReLU(arch.neg_slope),
            ]
        for _ in range(arch.res_blocks):
            layers.append(ResidualBlock(w, arch.neg_slope, arch.gen_norm))
        for _ in range(arch.down_stages):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                _pad_same_4x4(),
                nn.Conv2d(w, w, 4),
                _norm(arch.gen_norm, w),
                nn.LeakyReLU(arch.neg_slope),
            ]
        self.trunk = nn.Sequential(*layers)
        self.delta_out = nn.Sequential(_pad_same_4x4(), nn.Conv2d(w, 3, 4), nn.Tanh())

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """x: (N,3,H,W) in [-1,1]; cond: (N,3) normalized Lab."""
        if x.shape[-1] != x.shape[-2]:
            raise ShapeError(f"expected square input, got {tuple(x.shape)}")
        if x.shape[-1] % self.arch.stride_factor != 0:
            raise ShapeError(
                f"side {x.shape[-1]} not divisible by {self.arch.stride_factor}"
            )
        planes = cond[:, :, None, None].expand(-1, -1, x.shape[-2], x.shape[-1])
        h = torch.cat([x, planes], dim=1)
        delta = self.delta_out(self.trunk(h))
        return torch.clamp(x + delta, -1.0, 1.0)


class Discriminator(nn.Module):
    def __init__(self, arch: ArchSpec):
        super().__init__()
        arch.validate()
        self.arch = arch
        w = arch.base_width
        layers: list[nn.Module] = []
        in_ch = 3
        for _ in range(arch.disc_depth):
            layers += [
                nn.Conv2d(in_ch, w, 4, stride=2, padding=1),
                _norm(arch.disc_norm, w),
                nn.LeakyReLU(arch.neg_slope),
            ]
            in_ch = w
            w *= 2
        self.trunk = nn.Sequential(*layers)
        self.score_head = nn.Sequential(_pad_same_4x4(), nn.Conv2d(in_ch, 1, 4))
        self.color_head = nn.Linear(in_ch, 3)
        self.bg_head = nn.Linear(in_ch, 3)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (score_map (N,1,h,w), color (N,3), bg (N,3)).

        The score map is unbounded; color/bg are tanh-bounded normalized Lab.
        """
        if x.shape[-1] % 2**self.arch.disc_depth != 0:
            raise ShapeError(
                f"side {x.shape[-1]} not divisible by {2 ** self.arch.disc_depth}"
            )
        feats = self.trunk(x)
        score = self.score_head(feats)
        pooled = feats.mean(dim=(2, 3))
        color = torch.tanh(self.color_head(pooled))
        bg = torch.tanh(self.bg_head(pooled))
        return score, color, bg


def init_params(arch: ArchSpec, seed: int) -> ModelParams:
    """Deterministic fan-in-scaled initialization; the generator's final
    residual-output conv starts at zero so a fresh model is the identity."""
    arch.validate()
    gen = Generator(arch)
    disc = Discriminator(arch)
    g = torch.Generator().manual_seed(seed)
    for module in (gen, disc):
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                gain = np.sqrt(2.0 / (1.0 + arch.neg_slope**2))
                std = gain / np.sqrt(fan_in)
                with torch.no_grad():
                    m.weight.copy_(
                        torch.randn(m.weight.shape, generator=g, dtype=torch.float32) * std
                    )
                    if m.bias is not None:
                        m.bias.zero_()
    final_conv = gen.delta_out[1]
    with torch.no_grad():
        final_conv.weight.zero_()
        final_conv.bias.zero_()
    gen.eval()
    disc.eval()
    return ModelParams(generator=gen, discriminator=disc, arch=arch, step=0)


def _to_batch(x: np.ndarray) -> torch.Tensor:
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got shape {x.shape}")
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))).float()[None]


def generator_forward(params: ModelParams, x: ImageTensor, c: LabColor) -> ImageTensor:
    """Single-image wrapper: [-1,1] image + target color -> [-1,1] image."""
    signed = x.to_signed()
    cond = torch.tensor([normalize_lab(c)], dtype=torch.float32)
    params.generator.eval()
    with torch.no_grad():
        out = params.generator(_to_batch(signed.data), cond)
    return ImageTensor(out[0].numpy().transpose(1, 2, 0).astype(np.float32), SIGNED)


def discriminator_forward(
    params: ModelParams, x: ImageTensor
) -> tuple[np.ndarray, LabColor, LabColor]:
    """Single-image wrapper returning (score map, makeup Lab, background Lab)."""
    signed = x.to_signed()
    params.discriminator.eval()
    with torch.no_grad():
        score, color, bg = params.discriminator(_to_batch(signed.data))
    return (
        score[0, 0].numpy(),
        denormalize_lab(tuple(float(v) for v in color[0])),
        denormalize_lab(tuple(float(v) for v in bg[0])),
    )


def save_checkpoint(params: ModelParams, path: str | Path, extras: dict | None = None) -> None:
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "arch": dataclasses.asdict(params.arch),
        "step": params.step,
        "generator": params.generator.state_dict(),
        "discriminator": params.discriminator.state_dict(),
        "extras": extras or {},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path, expected_arch: ArchSpec | None = None) -> ModelParams:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    arch = ArchSpec(**payload["arch"])
    if expected_arch is not None and arch != expected_arch:
        raise CheckpointError(
            f"checkpoint architecture {arch} does not match requested {expected_arch}"
        )
    params = ModelParams(
        generator=Generator(arch), discriminator=Discriminator(arch), arch=arch,
        step=int(payload["step"]),
    )
    try:
        params.generator.load_state_dict(payload["generator"])
        params.discriminator.load_state_dict(payload["discriminator"])
    except (RuntimeError, KeyError) as e:
        raise CheckpointError(f"weight blobs do not match architecture: {e}") from e
    params.generator.eval()
    params.discriminator.eval()
    return params


def load_checkpoint_extras(path: str | Path) -> dict:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint")
    return payload.get("extras", {})
