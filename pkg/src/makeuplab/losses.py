"""Objective terms: Lab color regression, WGAN-GP adversarial pair,
MS-SSIM cycle consistency, background consistency, and their totals.

Conventions, fixed across the package:
  * color regressions are squared L2 norms in Lab units, averaged over the
    batch (no per-dimension averaging);
  * the critic's spatial score map is reduced by mean before batch averaging;
  * during a generator step the critic is a frozen (but differentiable)
    function, and vice versa during a critic step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .color import denormalize_lab_array, lab_to_srgb_array, normalize_lab_array
from .errors import ScaleError, ShapeError

MSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW_SIZE = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03
_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    gp: float = 10.0
    color: float = 10.0
    bg: float = 5.0
    cycle: float = 200.0

    def __post_init__(self):
        for name in ("gp", "color", "bg", "cycle"):
            if getattr(self, name) < 0:
                raise ShapeError(f"loss weight {name} must be nonnegative")


@dataclass
class TrainBatch:
    """One batch: signed images plus weak/target colors in Lab and sRGB."""

    x: torch.Tensor  # (N,3,H,W) in [-1,1]
    makeup_lab: torch.Tensor  # (N,3) weak makeup labels, Lab units
    skin_lab: torch.Tensor  # (N,3) weak skin labels, Lab units
    target_lab: torch.Tensor  # (N,3) sampled target colors, Lab units
    makeup_rgb: torch.Tensor  # (N,3) same labels in [0,1] sRGB
    target_rgb: torch.Tensor

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("makeup_lab", "skin_lab", "target_lab", "makeup_rgb", "target_rgb"):
            t = getattr(self, name)
            if t.shape != (n, 3):
                raise ShapeError(f"{name} has shape {tuple(t.shape)}, expected ({n}, 3)")
            if not torch.isfinite(t).all():
                raise ShapeError(f"{name} contains non-finite values")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def target_cond(self) -> torch.Tensor:
        """Targets as normalized-Lab condition planes input."""
        return torch.from_numpy(
            normalize_lab_array(self.target_lab.numpy()).astype(np.float32)
        )

    @property
    def makeup_cond(self) -> torch.Tensor:
        return torch.from_numpy(
            normalize_lab_array(self.makeup_lab.numpy()).astype(np.float32)
        )


def make_batch(images: np.ndarray, makeup: np.ndarray, skin: np.ndarray,
               targets: np.ndarray) -> TrainBatch:
    """Assemble a batch from unit-range HWC images and Lab color arrays."""
    x = torch.from_numpy(
        np.ascontiguousarray(images.transpose(0, 3, 1, 2)).astype(np.float32)
    ) * 2.0 - 1.0
    to_rgb = lambda lab: torch.from_numpy(
        lab_to_srgb_array(lab)[0].astype(np.float32)
    )
    return TrainBatch(
        x=x,
        makeup_lab=torch.from_numpy(np.asarray(makeup, dtype=np.float32)),
        skin_lab=torch.from_numpy(np.asarray(skin, dtype=np.float32)),
        target_lab=torch.from_numpy(np.asarray(targets, dtype=np.float32)),
        makeup_rgb=to_rgb(np.asarray(makeup)),
        target_rgb=to_rgb(np.asarray(targets)),
    )


# ---------------------------------------------------------------------------
# MS-SSIM

def _gaussian_kernel(dtype, device) -> torch.Tensor:
    coords = torch.arange(_WINDOW_SIZE, dtype=dtype, device=device) - (_WINDOW_SIZE - 1) / 2
    g = torch.exp(-(coords**2) / (2 * _SIGMA**2))
    return g / g.sum()


def _blur(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # Separable valid-mode Gaussian, grouped per channel.
    c = x.shape[1]
    kx = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    return F.conv2d(F.conv2d(x, kx, groups=c), ky, groups=c)


def _ssim_maps(x: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (luminance, contrast-structure) maps with a valid 11x11 window."""
    kernel = _gaussian_kernel(x.dtype, x.device)
    mx, my = _blur(x, kernel), _blur(y, kernel)
    mx2, my2, mxy = mx * mx, my * my, mx * my
    sx = _blur(x * x, kernel) - mx2
    sy = _blur(y * y, kernel) - my2
    sxy = _blur(x * y, kernel) - mxy
    c1, c2 = _K1**2, _K2**2
    lum = (2 * mxy + c1) / (mx2 + my2 + c1)
    cs = (2 * sxy + c2) / (sx + sy + c2)
    return lum, cs


def _as_nchw(x) -> torch.Tensor:
    if isinstance(x, np.ndarray):
        if x.ndim == 3 and x.shape[2] == 3:
            x = torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))).double()[None]
        else:
            raise ShapeError(f"expected HxWx3 array, got shape {x.shape}")
    elif x.dim() == 3:
        x = x[None]
    return x


def max_scales_for(side: int) -> int:
    s = 1
    while s < len(MSSIM_WEIGHTS) and 2**s * _WINDOW_SIZE <= side:
        s += 1
    return s


def mssim(x, y, scales: int | None = None) -> torch.Tensor:
    """Multiscale structural similarity in (0, 1]; differentiable.

    Inputs are (N,3,H,W) tensors (or HxWx3 arrays) with values in [0, 1].
    ``scales=None`` picks the largest canonical count the side supports;
    per-scale exponents are renormalized when fewer than 5 scales are used.
    """
    x, y = _as_nchw(x), _as_nchw(y)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    side = min(x.shape[-2], x.shape[-1])
    if scales is None:
        scales = max_scales_for(side)
    if not 1 <= scales <= len(MSSIM_WEIGHTS):
        raise ScaleError(f"scales must be in [1, {len(MSSIM_WEIGHTS)}], got {scales}")
    if side < 2 ** (scales - 1) * _WINDOW_SIZE:
        raise ScaleError(
            f"side {side} below {2 ** (scales - 1) * _WINDOW_SIZE} required for {scales} scales"
        )
    weights = torch.tensor(MSSIM_WEIGHTS[:scales], dtype=x.dtype, device=x.device)
    weights = weights / weights.sum()

    value = torch.ones((), dtype=x.dtype, device=x.device)
    for level in range(scales):
        lum, cs = _ssim_maps(x, y)
        if level == scales - 1:
            term = (lum * cs).mean().clamp(min=_EPS)
        else:
            term = cs.mean().clamp(min=_EPS)
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
        value = value * term ** weights[level]
    return value


def cycle_loss(x, x_hat, scales: int | None = None) -> torch.Tensor:
    """1 - MSSIM over [0,1]-ranged images."""
    return 1.0 - mssim(x, x_hat, scales)


# ---------------------------------------------------------------------------
# Color regression (critic and generator sides)

def _denorm_lab_t(normalized: torch.Tensor) -> torch.Tensor:
    lab = torch.empty_like(normalized)
    lab[:, 0] = 50.0 * (normalized[:, 0] + 1.0)
    lab[:, 1] = (255.0 * normalized[:, 1] - 1.0) / 2.0
    lab[:, 2] = (255.0 * normalized[:, 2] - 1.0) / 2.0
    return lab


def _head_to_space(head: torch.Tensor, color_space: str) -> torch.Tensor:
    if color_space == "lab":
        return _denorm_lab_t(head)
    if color_space == "rgb":
        return (head + 1.0) / 2.0
    raise ShapeError(f"unknown color space {color_space!r}")


def _labels(batch: TrainBatch, which: str, color_space: str) -> torch.Tensor:
    if color_space == "lab":
        return {"makeup": batch.makeup_lab, "target": batch.target_lab}[which]
    return {"makeup": batch.makeup_rgb, "target": batch.target_rgb}[which]


def _sq_err(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return ((a - b) ** 2).sum(dim=1).mean()


def color_loss_d(batch: TrainBatch, D, color_space: str = "lab") -> torch.Tensor:
    """Critic color regression on real images against the weak labels."""
    _, color, _ = D(batch.x)
    return _sq_err(_head_to_space(color, color_space), _labels(batch, "makeup", color_space))


def color_loss_g(batch: TrainBatch, G, D, color_space: str = "lab") -> torch.Tensor:
    """Squared color distance between the targets and the critic's estimate
    of the generated images; drives the generator toward the condition."""
    fake = G(batch.x, batch.target_cond)
    _, color, _ = D(fake)
    return _sq_err(_head_to_space(color, color_space), _labels(batch, "target", color_space))


# ---------------------------------------------------------------------------
# Adversarial pair

def _score_per_sample(score_map: torch.Tensor) -> torch.Tensor:
    return score_map.mean(dim=(1, 2, 3))


def gradient_penalty(D, real: torch.Tensor, fake: torch.Tensor,
                     rng: torch.Generator) -> torch.Tensor:
    """Unit-gradient-norm penalty on per-sample convex interpolates."""
    if real.shape != fake.shape:
        raise ShapeError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    eps = torch.rand(real.shape[0], 1, 1, 1, generator=rng, dtype=real.dtype)
    interp = (eps * real + (1.0 - eps) * fake.detach()).requires_grad_(True)
    score, _, _ = D(interp)
    total = _score_per_sample(score).sum()
    if total.requires_grad:
        grads = torch.autograd.grad(total, interp, create_graph=True,
                                    allow_unused=True)[0]
    else:
        grads = None
    if grads is None:
        # score independent of the input: gradient is identically zero
        grads = torch.zeros_like(interp)
    norms = grads.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def adv_loss_d(batch: TrainBatch, G, D, rng: torch.Generator,
               lambda_gp: float = 10.0) -> torch.Tensor:
    """Critic objective: fake score minus real score plus weighted penalty."""
    with torch.no_grad():
        fake = G(batch.x, batch.target_cond)
    score_fake, _, _ = D(fake)
    score_real, _, _ = D(batch.x)
    gp = gradient_penalty(D, batch.x, fake, rng) if lambda_gp != 0.0 else 0.0
    return _score_per_sample(score_fake).mean() - _score_per_sample(score_real).mean() \
        + lambda_gp * gp


def adv_loss_g(batch: TrainBatch, G, D) -> torch.Tensor:
    """Negated mean critic score on generated images."""
    fake = G(batch.x, batch.target_cond)
    score, _, _ = D(fake)
    return -_score_per_sample(score).mean()


# ---------------------------------------------------------------------------
# Background consistency

def bg_loss_d(batch: TrainBatch, D) -> torch.Tensor:
    """Critic background regression on real images against the skin labels."""
    _, _, bg = D(batch.x)
    return _sq_err(_denorm_lab_t(bg), batch.skin_lab)


def bg_loss_g(batch: TrainBatch, G, D) -> torch.Tensor:
    """Penalizes background-color drift between source and generated images.

    The source-side estimate is detached: it acts as the regression target,
    so gradients flow only through the generated branch.
    """
    _, _, bg_src = D(batch.x)
    fake = G(batch.x, batch.target_cond)
    _, _, bg_fake = D(fake)
    return _sq_err(_denorm_lab_t(bg_src).detach(), _denorm_lab_t(bg_fake))


# ---------------------------------------------------------------------------
# Totals

def total_loss_d(batch: TrainBatch, G, D, w: LossWeights, rng: torch.Generator,
                 color_space: str = "lab", use_bg: bool = True) -> torch.Tensor:
    """Unweighted sum of the critic terms (the penalty weight lives inside
    the adversarial term)."""
    total = adv_loss_d(batch, G, D, rng, w.gp) + color_loss_d(batch, D, color_space)
    if use_bg:
        total = total + bg_loss_d(batch, D)
    return total


def total_loss_g(batch: TrainBatch, G, D, w: LossWeights,
                 color_space: str = "lab", use_bg: bool = True,
                 scales: int | None = None) -> torch.Tensor:
    """Weighted generator objective."""
    total = adv_loss_g(batch, G, D) + w.color * color_loss_g(batch, G, D, color_space)
    if use_bg:
        total = total + w.bg * bg_loss_g(batch, G, D)
    fake = G(batch.x, batch.target_cond)
    x_hat = G(fake, batch.makeup_cond)
    total = total + w.cycle * cycle_loss((batch.x + 1) / 2, (x_hat + 1) / 2, scales)
    return total


def critic_losses(batch: TrainBatch, G, D, w: LossWeights, rng: torch.Generator,
                  color_space: str = "lab", use_bg: bool = True) -> dict[str, torch.Tensor]:
    """Fused critic terms sharing one generator pass; recomposes to
    total_loss_d exactly."""
    with torch.no_grad():
        fake = G(batch.x, batch.target_cond)
    score_real, color_real, bg_real = D(batch.x)
    score_fake, _, _ = D(fake)
    gp = gradient_penalty(D, batch.x, fake, rng) if w.gp != 0.0 else torch.zeros(())
    adv = _score_per_sample(score_fake).mean() - _score_per_sample(score_real).mean() \
        + w.gp * gp
    color = _sq_err(_head_to_space(color_real, color_space),
                    _labels(batch, "makeup", color_space))
    bg = _sq_err(_denorm_lab_t(bg_real), batch.skin_lab) if use_bg \
        else torch.zeros(())
    total = adv + color + (bg if use_bg else 0.0)
    return {"adv": adv, "gp": gp, "color": color, "bg": bg, "total": total}


def generator_losses(batch: TrainBatch, G, D, w: LossWeights,
                     color_space: str = "lab", use_bg: bool = True,
                     scales: int | None = None) -> dict[str, torch.Tensor]:
    """Fused generator terms sharing the forward passes; recomposes to
    total_loss_g exactly."""
    fake = G(batch.x, batch.target_cond)
    score_fake, color_fake, bg_fake = D(fake)
    adv = -_score_per_sample(score_fake).mean()
    color = _sq_err(_head_to_space(color_fake, color_space),
                    _labels(batch, "target", color_space))
    if use_bg:
        with torch.no_grad():
            _, _, bg_src = D(batch.x)
        bg = _sq_err(_denorm_lab_t(bg_src), _denorm_lab_t(bg_fake))
    else:
        bg = torch.zeros(())
    x_hat = G(fake, batch.makeup_cond)
    cyc = cycle_loss((batch.x + 1) / 2, (x_hat + 1) / 2, scales)
    total = adv + w.color * color + (w.bg * bg if use_bg else 0.0) + w.cycle * cyc
    return {"adv": adv, "color": color, "bg": bg, "cycle": cyc, "total": total}
