"""DDPM forward/reverse processes with low-resolution conditioning.

Clips enter and leave this module in [0, 1]; internally the data lives in
[-1, 1]. The denoiser sees ``concat([x_t, upsample(lr)], channel)`` and
predicts the injected noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from vidinflate.errors import ConfigError, ShapeError, TimestepError
from vidinflate.model import fold_frames, forward_video, unfold_frames

SR_FACTOR = 4


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def coefficients(self, t: torch.Tensor, ndim: int) -> tuple[torch.Tensor, torch.Tensor]:
        """sqrt(alpha_bar_t) and sqrt(1 - alpha_bar_t) shaped to broadcast over a rank-``ndim`` batch."""
        t = torch.as_tensor(t)
        if t.numel() and (int(t.min()) < 0 or int(t.max()) >= self.T):
            raise TimestepError(f"timestep outside [0, {self.T})")
        ab = torch.from_numpy(self.alpha_bar)[t]
        shape = (-1,) + (1,) * (ndim - 1)
        return ab.sqrt().to(torch.float32).reshape(shape), (1.0 - ab).sqrt().to(torch.float32).reshape(shape)


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if not isinstance(T, int) or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    return NoiseSchedule(T, beta, alpha, np.cumprod(alpha))


def q_sample(schedule: NoiseSchedule, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """x_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps, with ``t`` indexing the leading axis."""
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ in shape")
    a, s = schedule.coefficients(t, x0.dim())
    return a * x0 + s * eps


def upsample_condition(lr_clip: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear upsampling of a (B, F, C, h, w) clip in [0, 1], returned in [-1, 1]."""
    frames = lr_clip.shape[1]
    up = F.interpolate(fold_frames(lr_clip), size=size, mode="bilinear", align_corners=False)
    return unfold_frames(up, frames) * 2.0 - 1.0


def _check_scale(hr_shape, lr_clip):
    if lr_clip.dim() != 5 or tuple(lr_clip.shape[:3]) != tuple(hr_shape[:3]):
        raise ShapeError(f"LR clip {tuple(lr_clip.shape)} does not pair with HR shape {tuple(hr_shape)}")
    if lr_clip.shape[-2] * SR_FACTOR != hr_shape[-2] or lr_clip.shape[-1] * SR_FACTOR != hr_shape[-1]:
        raise ShapeError(f"LR size {tuple(lr_clip.shape[-2:])} is not 1/{SR_FACTOR} of HR size {tuple(hr_shape[-2:])}")


def draw_noise(schedule: NoiseSchedule, shape, rng_seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """The (t, eps) pair that ``training_loss`` uses for ``rng_seed``."""
    gen = torch.Generator().manual_seed(rng_seed)
    t = torch.randint(0, schedule.T, (shape[0],), generator=gen)
    eps = torch.randn(tuple(shape), generator=gen)
    return t, eps


def training_loss(
    params,
    schedule: NoiseSchedule,
    hr_clip: torch.Tensor,
    lr_clip: torch.Tensor,
    text: torch.Tensor,
    rng_seed: int,
    *,
    adapters_enabled: bool = True,
    model_fn=forward_video,
) -> torch.Tensor:
    """Mean squared error of the noise prediction (a scalar tensor, differentiable)."""
    _check_scale(hr_clip.shape, lr_clip)
    t, eps = draw_noise(schedule, hr_clip.shape, rng_seed)
    x_t = q_sample(schedule, hr_clip * 2.0 - 1.0, t, eps)
    cond = upsample_condition(lr_clip, tuple(hr_clip.shape[-2:]))
    pred = model_fn(params, torch.cat([x_t, cond], dim=2), t, text, adapters_enabled)
    return torch.mean((pred - eps) ** 2)


def step_seed(rng_seed: int, t: int) -> int:
    return int(np.random.SeedSequence([rng_seed, t]).generate_state(1)[0])


def _reverse_step(params, schedule, x_t, t, cond, text, rng_seed, adapters_enabled, model_fn):
    tt = torch.full((x_t.shape[0],), t, dtype=torch.long)
    eps_hat = model_fn(params, torch.cat([x_t, cond], dim=2), tt, text, adapters_enabled)
    beta, alpha, ab = schedule.beta[t], schedule.alpha[t], schedule.alpha_bar[t]
    mean = (x_t - float(beta / np.sqrt(1.0 - ab)) * eps_hat) / float(np.sqrt(alpha))
    if t == 0:
        return mean
    gen = torch.Generator().manual_seed(rng_seed)
    return mean + float(np.sqrt(beta)) * torch.randn(x_t.shape, generator=gen)


def p_sample_step(
    params,
    schedule: NoiseSchedule,
    x_t: torch.Tensor,
    t: int,
    lr_clip: torch.Tensor,
    text: torch.Tensor,
    rng_seed: int,
    *,
    adapters_enabled: bool = True,
    model_fn=forward_video,
) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1} (sigma_t^2 = beta_t; no noise at t = 0)."""
    if not 0 <= t < schedule.T:
        raise TimestepError(f"timestep {t} outside [0, {schedule.T})")
    cond = upsample_condition(lr_clip, tuple(x_t.shape[-2:]))
    return _reverse_step(params, schedule, x_t, t, cond, text, rng_seed, adapters_enabled, model_fn)


@torch.no_grad()
def sample(
    params,
    schedule: NoiseSchedule,
    lr_clip: torch.Tensor,
    text: torch.Tensor,
    rng_seed: int,
    *,
    adapters_enabled: bool = True,
    model_fn=forward_video,
) -> torch.Tensor:
    """Full reverse chain from x_T ~ N(0, I); returns a clip in [0, 1] at 4x the LR size."""
    b, f, c, h, w = lr_clip.shape
    size = (h * SR_FACTOR, w * SR_FACTOR)
    gen = torch.Generator().manual_seed(rng_seed)
    x = torch.randn((b, f, c) + size, generator=gen)
    cond = upsample_condition(lr_clip, size)
    for t in reversed(range(schedule.T)):
        x = _reverse_step(params, schedule, x, t, cond, text, step_seed(rng_seed, t), adapters_enabled, model_fn)
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)
