"""Physics predictor: regresses physics tokens from the noisy latent, text, and timestep.

Three stages: a lightweight 3D-conv encoder over the latent (one stride-2
halving of all axes), a transformer encoder over the fused
[visual; text; timestep] sequence, and a learnable-query cross-attention
decoder projecting to the physics-token width.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .layers import CrossAttentionBlock, EncoderBlock


class PhysicsPredictor(nn.Module):
    def __init__(self, cfg: ModelConfig, decoder_blocks: int = 2):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.conv1 = nn.Conv3d(cfg.latent_channels, d, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv3d(d, d, kernel_size=3, stride=1, padding=1)
        n_vis = (cfg.latent_frames // 2) * (cfg.latent_height // 2) * (cfg.latent_width // 2)
        self.vis_pos = nn.Parameter(torch.zeros(n_vis, d))
        nn.init.normal_(self.vis_pos, std=0.02)
        self.text_proj = nn.Linear(cfg.text_dim, d)
        self.time_proj = nn.Linear(cfg.timestep_embed_dim, d)
        self.fusion = nn.ModuleList(
            EncoderBlock(d, cfg.predictor_heads) for _ in range(cfg.predictor_layers)
        )
        self.query_bank = nn.Parameter(torch.empty(cfg.phys_tokens, d))
        nn.init.normal_(self.query_bank, std=0.02)
        self.decoder = nn.ModuleList(
            CrossAttentionBlock(d, cfg.predictor_heads) for _ in range(decoder_blocks)
        )
        self.out_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, cfg.phys_dim)

    def encode_latent(self, z_t: torch.Tensor) -> torch.Tensor:
        """[B, C, F, H, W] -> [B, d, F/2, H/2, W/2]."""
        c = self.cfg
        if z_t.shape[1:] != (c.latent_channels, c.latent_frames, c.latent_height, c.latent_width):
            raise ValueError(f"latent shape {tuple(z_t.shape)} does not match config")
        h = F.silu(self.conv1(z_t))
        return self.conv2(h)

    def fuse(self, h_vis: torch.Tensor, c_text: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        """Flatten visual features, project text and timestep, run the fusion encoder.

        Sequence order is [visual tokens; text tokens; timestep token];
        output is [B, F/2*H/2*W/2 + L + 1, d].
        """
        B, d = h_vis.shape[0], h_vis.shape[1]
        vis = h_vis.flatten(2).transpose(1, 2) + self.vis_pos
        txt = self.text_proj(c_text)
        tt = self.time_proj(t_emb).unsqueeze(1)
        x = torch.cat([vis, txt, tt], dim=1)
        for block in self.fusion:
            x = block(x)
        return x

    def decode_physics(self, h_fused: torch.Tensor) -> torch.Tensor:
        """Learnable queries cross-attend to the fused sequence; project to [B, N, Dp]."""
        q = self.query_bank.unsqueeze(0).expand(h_fused.shape[0], -1, -1)
        for block in self.decoder:
            q = block(q, h_fused)
        return self.out_proj(self.out_norm(q))

    def forward(self, z_t: torch.Tensor, c_text: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        return self.decode_physics(self.fuse(self.encode_latent(z_t), c_text, t_emb))

    predict = forward
