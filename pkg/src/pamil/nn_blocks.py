from __future__ import annotations

import torch
from torch import nn


class EncoderBlock(nn.Module):
    """Pre-norm transformer encoder block that also returns head-averaged attention weights."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 4):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_mult * dim), nn.GELU(), nn.Linear(ff_mult * dim, dim))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # x: (L, D) or (N, L, D)
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        h = self.norm1(x)
        a, w = self.attn(h, h, h, need_weights=True)
        x = x + a
        x = x + self.ff(self.norm2(x))
        if squeeze:
            return x.squeeze(0), w.squeeze(0)
        return x, w
