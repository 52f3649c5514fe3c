"""Class-token classification over step tokens, decision fusion and the classification losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .nn_blocks import EncoderBlock

PROB_EPS = 1e-7
AGGREGATORS = ("cls", "max", "mean")


@dataclass
class BagPrediction:
    score: torch.Tensor
    step_scores: torch.Tensor
    cls_embedding: torch.Tensor
    attention: Optional[torch.Tensor]  # (T+1, T+1) self-attention, None for pooling heads

    @property
    def fused_score(self) -> float:
        s = self.score.item()
        return fuse_decision(self.step_scores.detach().cpu().numpy(), s, gate=int(s >= 0.5))

    def fused_label_conditioned(self, label: int) -> float:
        """Literal label-gated variant, for diagnostics only."""
        return fuse_decision(self.step_scores.detach().cpu().numpy(), self.score.item(), gate=int(label == 1))


class TCM(nn.Module):
    def __init__(self, dim: int, heads: int, aggregator: str = "cls"):
        super().__init__()
        if aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {aggregator!r}")
        self.aggregator = aggregator
        self.cls_token = nn.Parameter(torch.randn(dim) * 0.02)
        self.encoder = EncoderBlock(dim, heads)
        self.bag_head = nn.Linear(dim, 1)
        self.step_head = nn.Linear(dim, 1)

    def forward(self, tokens: torch.Tensor) -> BagPrediction:
        if tokens.dim() != 2 or tokens.shape[0] == 0:
            raise ValueError("classify_bag needs a non-empty (T, D) token matrix")
        attn = None
        if self.aggregator == "cls":
            out, attn = self.encoder(torch.cat([self.cls_token.unsqueeze(0), tokens], dim=0))
            h = out[0]
        elif self.aggregator == "max":
            h = tokens.max(dim=0).values
        else:
            h = tokens.mean(dim=0)
        score = torch.sigmoid(self.bag_head(h)).squeeze(-1)
        step_scores = torch.sigmoid(self.step_head(tokens)).squeeze(-1)
        return BagPrediction(score, step_scores, h, attn)


def fuse_decision(step_scores, score: float, gate: int) -> float:
    """Blend max / top-3 / top-5 step scores with the bag score when ``gate`` is set."""
    s = np.sort(np.asarray(step_scores, dtype=np.float64))[::-1]
    if not gate or s.size == 0:
        return float(score)
    top1 = s[0]
    top3 = s[: min(3, s.size)].mean()
    top5 = s[: min(5, s.size)].mean()
    return float((top1 + top3 + top5 + score) / 4.0)


def wsl_loss(score: torch.Tensor, label) -> torch.Tensor:
    p = torch.clamp(score, PROB_EPS, 1.0 - PROB_EPS)
    y = torch.as_tensor(label, dtype=p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p))


def stl_loss(step_scores: torch.Tensor, label) -> torch.Tensor:
    if step_scores.numel() == 0:
        return step_scores.new_zeros(())
    return wsl_loss(step_scores, label).mean()
