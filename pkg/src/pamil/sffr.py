"""Selection fusion: encode one sampled group around the carried token, then fuse with past tokens."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .nn_blocks import EncoderBlock


class SFFR(nn.Module):
    def __init__(self, dim: int, heads: int, max_group: int):
        super().__init__()
        self.dim = dim
        self.max_group = max_group
        self.init_token = nn.Parameter(torch.randn(dim) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(max_group, dim) * 0.02)
        self.trm = EncoderBlock(dim, heads)
        self.fuse = nn.MultiheadAttention(dim, heads, batch_first=True)
        hidden = max(dim // 2, 1)
        self.predictor = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, dim))

    def trm_encode(self, u_prev: torch.Tensor, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the position-0 output and the full self-attention matrix."""
        n = features.shape[0]
        if n == 0:
            raise ValueError("empty group")
        if n > self.max_group:
            raise ValueError(f"group of {n} exceeds the positional table ({self.max_group} rows)")
        seq = torch.cat([u_prev.unsqueeze(0), features + self.pos_embed[:n]], dim=0)
        out, attn = self.trm(seq)
        return out[0], attn

    def mha_fuse(self, trm_token: torch.Tensor, past: Sequence[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        q = trm_token.view(1, 1, -1)
        kv = torch.stack([trm_token, *past], dim=0).unsqueeze(0)
        out, w = self.fuse(q, kv, kv, need_weights=True)
        return out.view(-1), w.view(-1)

    def forward(self, u_prev, features, past):
        token, trm_attn = self.trm_encode(u_prev, features)
        fused, fuse_attn = self.mha_fuse(token, past)
        return fused, trm_attn, fuse_attn


def negative_cosine(p: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    return -F.cosine_similarity(p, z.detach(), dim=-1)


def sia_loss(predictor: nn.Module, tokens: Sequence[torch.Tensor]) -> torch.Tensor:
    """Symmetric stop-gradient negative cosine between adjacent step tokens, averaged over T-1 pairs."""
    if len(tokens) < 2:
        ref = tokens[0] if tokens else torch.zeros(())
        return ref.new_zeros(())
    u = torch.stack(list(tokens), dim=0)
    p = predictor(u)
    terms = 0.5 * negative_cosine(p[1:], u[:-1]) + 0.5 * negative_cosine(p[:-1], u[1:])
    return terms.mean()
