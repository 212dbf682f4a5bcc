"""DDPM math: noise schedule tables, forward noising, reverse step, timestep embedding.

All functions are pure and operate on torch tensors in full precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import DiffusionConfig


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    posterior_variances: torch.Tensor

    @property
    def num_timesteps(self) -> int:
        return self.betas.shape[0]


def make_schedule(cfg: DiffusionConfig) -> NoiseSchedule:
    T = cfg.num_timesteps
    betas = torch.linspace(cfg.beta_start, cfg.beta_end, T, dtype=torch.float64)
    return schedule_from_betas(betas)


def schedule_from_betas(betas: torch.Tensor) -> NoiseSchedule:
    betas = betas.to(torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    post = torch.zeros_like(betas)
    if betas.shape[0] > 1:
        post[1:] = betas[1:] * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:])
    return NoiseSchedule(betas, alphas, alpha_bars, post)


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not (0 <= t < sched.num_timesteps):
        raise ValueError(f"timestep {t} out of range [0, {sched.num_timesteps})")


def q_sample(z0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward process: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    _check_t(t, sched)
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    ab = sched.alpha_bars[t].to(z0.dtype)
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps


def ddpm_step(
    z_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One reverse step: posterior mean update plus posterior-variance noise for t > 0."""
    _check_t(t, sched)
    if eps_hat.shape != z_t.shape:
        raise ValueError(f"eps_hat shape {tuple(eps_hat.shape)} != z_t shape {tuple(z_t.shape)}")
    dtype = z_t.dtype
    beta = sched.betas[t].to(dtype)
    alpha = sched.alphas[t].to(dtype)
    ab = sched.alpha_bars[t].to(dtype)
    # beta = 0 implies alpha_bar = 1; the eps coefficient is 0, not 0/0
    coef = beta / torch.sqrt(1.0 - ab) if float(beta) > 0.0 else beta
    mean = (z_t - coef * eps_hat) / torch.sqrt(alpha)
    if t == 0:
        return mean
    if noise is None:
        raise ValueError("noise is required for t > 0")
    if noise.shape != z_t.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != z_t shape {tuple(z_t.shape)}")
    return mean + torch.sqrt(sched.posterior_variances[t].to(dtype)) * noise


def timestep_embedding(t: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Sinusoidal embedding of the raw integer timestep; half sin, half cos, max period 10000."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    )
    args = float(t) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)]).to(dtype)
