"""Shared transformer building blocks (attention, MLP) used by predictor and generator."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiHeadAttention(nn.Module):
    """Plain multi-head attention with explicit q/k/v/out projections.

    Queries may come from a different sequence than keys/values (cross-attention).
    """

    def __init__(self, dim: int, num_heads: int, kv_dim: int | None = None):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(kv_dim, dim)
        self.w_v = nn.Linear(kv_dim, dim)
        self.w_o = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, kv: torch.Tensor | None = None) -> torch.Tensor:
        # x: [B, Lq, dim]; kv: [B, Lk, kv_dim] (defaults to x)
        kv = x if kv is None else kv
        B, Lq, _ = x.shape
        Lk = kv.shape[1]
        q = self.w_q(x).view(B, Lq, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.w_k(kv).view(B, Lk, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.w_v(kv).view(B, Lk, self.num_heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.head_dim**0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Lq, -1)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.silu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-LN self-attention + feed-forward block."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class CrossAttentionBlock(nn.Module):
    """Pre-LN cross-attention + feed-forward; no query self-attention."""

    def __init__(self, dim: int, num_heads: int, kv_dim: int | None = None):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads, kv_dim=kv_dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), kv)
        return x + self.ff(self.norm2(x))
