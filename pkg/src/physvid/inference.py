"""Text-to-video generation: reverse DDPM with per-step physics prediction.

Each reverse step embeds the timestep, runs the physics predictor on the
current latent, and denoises with the predicted tokens injected through the
gated cross-attention. Physics-off forces the gates to 0 at call time and
never evaluates the predictor, so A/B comparisons share all weights.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import DiffusionConfig, ModelConfig
from .data import toy_vae_decode
from .diffusion import NoiseSchedule, ddpm_step, make_schedule, timestep_embedding
from .data import toy_text_embed
from .generator import Generator
from .predictor import PhysicsPredictor


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    num_steps: int
    seed: int
    physics: str = "on"  # "on" | "off"


@dataclass
class GeneratedVideo:
    frames: torch.Tensor  # uint8 [3, F_px, H_px, W_px]
    latents_final: torch.Tensor
    per_step_physics_norm: list[float] = field(default_factory=list)


VAE_SCALING_FACTOR = 1.0  # toy codec metadata; real codecs supply their own


def generate(
    req: GenerationRequest,
    predictor: PhysicsPredictor,
    generator: Generator,
    sched: NoiseSchedule,
    cfg: ModelConfig,
) -> GeneratedVideo:
    if req.physics not in ("on", "off"):
        raise ValueError(f"physics must be 'on' or 'off', got {req.physics!r}")
    T = sched.num_timesteps
    if not (1 <= req.num_steps <= T):
        raise ValueError(f"num_steps {req.num_steps} out of range [1, {T}]")
    g = torch.Generator().manual_seed(req.seed)
    shape = (1, cfg.latent_channels, cfg.latent_frames, cfg.latent_height, cfg.latent_width)
    z = torch.randn(shape, generator=g)
    c_text = toy_text_embed(req.prompt, cfg).unsqueeze(0)
    norms = []
    with torch.no_grad():
        for t in range(req.num_steps - 1, -1, -1):
            t_emb = timestep_embedding(t, cfg.timestep_embed_dim).unsqueeze(0)
            if req.physics == "on":
                p_hat = predictor(z, c_text, t_emb)
                norms.append(float(p_hat.norm()))
                eps_hat = generator(z, t_emb, c_text, p_hat)
            else:
                norms.append(0.0)
                eps_hat = generator(z, t_emb, c_text, None, gate_override=0.0)
            noise = torch.randn(shape, generator=g) if t > 0 else None
            z = ddpm_step(z, eps_hat, t, sched, noise)
            if not torch.isfinite(z).all():
                raise FloatingPointError(f"non-finite latent after reverse step t={t}")
    z0 = z[0] / VAE_SCALING_FACTOR
    pixels = toy_vae_decode(z0, cfg)
    # round half away from zero (values are non-negative after the clamp)
    frames = torch.floor(torch.clamp((pixels + 1.0) * 127.5, 0.0, 255.0) + 0.5).clamp(0, 255).to(torch.uint8)
    return GeneratedVideo(frames=frames, latents_final=z0, per_step_physics_norm=norms)


def dry_run(prompt: str, cfg: ModelConfig, diff_cfg: DiffusionConfig, seed: int = 0) -> dict:
    """One predict + denoise + ddpm_step at t = T-1 with freshly initialized weights.

    Loads no checkpoint; returns intermediate shapes, wall time, and finiteness flags.
    """
    start = time.perf_counter()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        predictor = PhysicsPredictor(cfg)
        generator = Generator(cfg)
    sched = make_schedule(diff_cfg)
    t = sched.num_timesteps - 1
    g = torch.Generator().manual_seed(seed)
    shape = (1, cfg.latent_channels, cfg.latent_frames, cfg.latent_height, cfg.latent_width)
    z = torch.randn(shape, generator=g)
    c_text = toy_text_embed(prompt, cfg).unsqueeze(0)
    t_emb = timestep_embedding(t, cfg.timestep_embed_dim).unsqueeze(0)
    with torch.no_grad():
        p_hat = predictor(z, c_text, t_emb)
        eps_hat = generator(z, t_emb, c_text, p_hat)
        noise = torch.randn(shape, generator=g) if t > 0 else None
        z_prev = ddpm_step(z, eps_hat, t, sched, noise)
    return {
        "prompt": prompt,
        "timestep": t,
        "latent_shape": list(z.shape[1:]),
        "text_shape": list(c_text.shape[1:]),
        "physics_shape": list(p_hat.shape[1:]),
        "eps_hat_shape": list(eps_hat.shape[1:]),
        "z_prev_shape": list(z_prev.shape[1:]),
        "all_finite": bool(
            torch.isfinite(p_hat).all() and torch.isfinite(eps_hat).all() and torch.isfinite(z_prev).all()
        ),
        "wall_time_s": time.perf_counter() - start,
    }


# --- lossless video container (PPM frame sequence) ------------------------------


def write_video(video: GeneratedVideo, path: str) -> None:
    """Write frames as binary PPM files frame_0000.ppm ... under a directory."""
    os.makedirs(path, exist_ok=True)
    arr = video.frames.numpy()  # [3, F, H, W] uint8
    _, F, H, W = arr.shape
    for t in range(F):
        img = arr[:, t].transpose(1, 2, 0)  # H W 3
        with open(os.path.join(path, f"frame_{t:04d}.ppm"), "wb") as fh:
            fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
            fh.write(img.tobytes())


def read_video(path: str) -> torch.Tensor:
    """Read a PPM frame directory back into a uint8 [3, F, H, W] tensor."""
    names = sorted(n for n in os.listdir(path) if n.endswith(".ppm"))
    if not names:
        raise FileNotFoundError(f"no .ppm frames in {path}")
    frames = []
    for name in names:
        with open(os.path.join(path, name), "rb") as fh:
            magic = fh.readline().strip()
            if magic != b"P6":
                raise ValueError(f"{name}: not a binary PPM file")
            dims = fh.readline().split()
            W, H = int(dims[0]), int(dims[1])
            fh.readline()  # maxval
            data = np.frombuffer(fh.read(W * H * 3), dtype=np.uint8).reshape(H, W, 3)
            frames.append(torch.from_numpy(data.copy().transpose(2, 0, 1)))
    return torch.stack(frames, dim=1)
