"""Factorized spatial-temporal denoiser with gated physics cross-attention.

Spatial blocks attend over patch tokens within each frame and cross-attend to
text; temporal blocks attend over frames at each spatial location and then
cross-attend to the predicted physics tokens through a per-block scalar gate.
Gates initialize to exactly 0, so at initialization the physics path is a
strict no-op.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .layers import FeedForward, MultiHeadAttention

PATCH = 2  # spatial patch size; frames are not patched temporally


class SpatialBlock(nn.Module):
    def __init__(self, dim: int, heads: int, text_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.text_attn = MultiHeadAttention(dim, heads, kv_dim=text_dim)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor, c_text: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.norm1(x))
        x = x + self.text_attn(self.norm2(x), c_text)
        return x + self.ff(self.norm3(x))


class TemporalBlock(nn.Module):
    def __init__(self, dim: int, heads: int, phys_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.phys_norm = nn.LayerNorm(dim)
        self.phys_attn = MultiHeadAttention(dim, heads, kv_dim=phys_dim)
        self.gate = nn.Parameter(torch.zeros(()))
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def physics_cross_attention(
        self, x: torch.Tensor, p_hat: torch.Tensor, gate_override: float | None = None
    ) -> torch.Tensor:
        """x' = x + gate * Attn(W_q x, W_k p_hat, W_v p_hat); softmax over physics tokens."""
        gate = self.gate if gate_override is None else x.new_tensor(gate_override)
        if gate_override == 0.0:
            return x  # physics path skipped entirely; p_hat never touched
        return x + gate * self.phys_attn(self.phys_norm(x), p_hat)

    def forward(
        self, x: torch.Tensor, p_hat: torch.Tensor, gate_override: float | None = None
    ) -> torch.Tensor:
        x = x + self.self_attn(self.norm1(x))
        x = self.physics_cross_attention(x, p_hat, gate_override)
        return x + self.ff(self.norm2(x))


class Generator(nn.Module):
    """Noise-prediction backbone: z_t, t_emb, c_text, p_hat -> eps_hat."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.latent_height % PATCH or cfg.latent_width % PATCH:
            raise ValueError("latent spatial dims must be divisible by the patch size")
        self.cfg = cfg
        d = cfg.hidden_dim
        patch_dim = cfg.latent_channels * PATCH * PATCH
        self.n_spatial = (cfg.latent_height // PATCH) * (cfg.latent_width // PATCH)
        self.patch_embed = nn.Linear(patch_dim, d)
        self.spatial_pos = nn.Parameter(torch.zeros(self.n_spatial, d))
        self.temporal_pos = nn.Parameter(torch.zeros(cfg.latent_frames, d))
        nn.init.normal_(self.spatial_pos, std=0.02)
        nn.init.normal_(self.temporal_pos, std=0.02)
        self.time_proj = nn.Linear(cfg.timestep_embed_dim, d)
        self.spatial_blocks = nn.ModuleList(
            SpatialBlock(d, cfg.gen_heads, cfg.text_dim) for _ in range(cfg.gen_spatial_blocks)
        )
        self.temporal_blocks = nn.ModuleList(
            TemporalBlock(d, cfg.gen_heads, cfg.phys_dim) for _ in range(cfg.gen_temporal_blocks)
        )
        self.out_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, patch_dim)

    def _patchify(self, z: torch.Tensor) -> torch.Tensor:
        # [B, C, F, H, W] -> [B, F, S, C*P*P] with S = (H/P)*(W/P)
        B, C, F_, H, W = z.shape
        p = PATCH
        x = z.permute(0, 2, 3, 4, 1)  # B F H W C
        x = x.reshape(B, F_, H // p, p, W // p, p, C)
        x = x.permute(0, 1, 2, 4, 3, 5, 6).reshape(B, F_, self.n_spatial, p * p * C)
        return x

    def _unpatchify(self, x: torch.Tensor) -> torch.Tensor:
        c = self.cfg
        p = PATCH
        B, F_, S, _ = x.shape
        hh, ww = c.latent_height // p, c.latent_width // p
        x = x.reshape(B, F_, hh, ww, p, p, c.latent_channels)
        x = x.permute(0, 1, 2, 4, 3, 5, 6).reshape(B, F_, c.latent_height, c.latent_width, c.latent_channels)
        return x.permute(0, 4, 1, 2, 3)

    def forward(
        self,
        z_t: torch.Tensor,
        t_emb: torch.Tensor,
        c_text: torch.Tensor,
        p_hat: torch.Tensor | None,
        gate_override: float | None = None,
    ) -> torch.Tensor:
        c = self.cfg
        if z_t.shape[1:] != (c.latent_channels, c.latent_frames, c.latent_height, c.latent_width):
            raise ValueError(f"latent shape {tuple(z_t.shape)} does not match config")
        if p_hat is None and gate_override != 0.0:
            raise ValueError("p_hat may only be omitted with gate_override=0.0")
        B, F_, S = z_t.shape[0], c.latent_frames, self.n_spatial
        x = self.patch_embed(self._patchify(z_t))  # [B, F, S, d]
        x = x + self.spatial_pos + self.temporal_pos[None, :, None, :]
        x = x + self.time_proj(t_emb)[:, None, None, :]
        for sp, tp in zip(self.spatial_blocks, self.temporal_blocks):
            xs = x.reshape(B * F_, S, -1)
            text_rep = c_text.repeat_interleave(F_, dim=0)
            x = sp(xs, text_rep).reshape(B, F_, S, -1)
            xt = x.transpose(1, 2).reshape(B * S, F_, -1)
            if p_hat is not None:
                p_rep = p_hat.repeat_interleave(S, dim=0)
            else:
                p_rep = None
            x = tp(xt, p_rep, gate_override).reshape(B, S, F_, -1).transpose(1, 2)
        eps = self._unpatchify(self.out_proj(self.out_norm(x)))
        if not torch.isfinite(eps).all():
            raise FloatingPointError("non-finite activations in denoiser output")
        return eps

    denoise = forward

    # --- parameter partitioning -------------------------------------------------

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        """Named groups that exactly partition the parameter set."""
        groups: dict[str, list[nn.Parameter]] = {
            "patch_embed": list(self.patch_embed.parameters()),
            "positional": [self.spatial_pos, self.temporal_pos],
            "time_proj": list(self.time_proj.parameters()),
            "spatial_blocks": list(self.spatial_blocks.parameters()),
            "temporal_core": [],
            "physics_attn": [],
            "output_head": list(self.out_norm.parameters()) + list(self.out_proj.parameters()),
        }
        for blk in self.temporal_blocks:
            groups["temporal_core"] += list(blk.norm1.parameters())
            groups["temporal_core"] += list(blk.self_attn.parameters())
            groups["temporal_core"] += list(blk.norm2.parameters())
            groups["temporal_core"] += list(blk.ff.parameters())
            groups["physics_attn"] += list(blk.phys_norm.parameters())
            groups["physics_attn"] += list(blk.phys_attn.parameters())
            groups["physics_attn"].append(blk.gate)
        return groups

    def gate_values(self) -> list[float]:
        return [float(blk.gate.detach()) for blk in self.temporal_blocks]


def apply_freeze(gen: Generator, policy: str) -> dict[str, bool]:
    """Set requires_grad per parameter group; returns the trainable-flag mask.

    "spatial-frozen": the (conceptually pretrained) spatial stack, patch embed,
    timestep projection, and positional embeddings are frozen; temporal blocks,
    physics cross-attention, and output head train.
    """
    if policy == "spatial-frozen":
        mask = {
            "patch_embed": False,
            "positional": False,
            "time_proj": False,
            "spatial_blocks": False,
            "temporal_core": True,
            "physics_attn": True,
            "output_head": True,
        }
    elif policy == "all-trainable":
        mask = {name: True for name in gen.param_groups()}
    else:
        raise ValueError(f"unknown freeze policy {policy!r}")
    for name, params in gen.param_groups().items():
        for p in params:
            p.requires_grad_(mask[name])
    return mask


def count_params(model: nn.Module) -> tuple[int, int]:
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return total, trainable
