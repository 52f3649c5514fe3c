"""Recurrent sampling policy, reward/penalty feedback and PPO updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.distributions import Categorical, Normal

from .sampling import DEFAULT_BETA_GRID, cosine_to

QUERY_GAUSSIAN = "QUERY_GAUSSIAN"
BETA_CATEGORICAL = "BETA_CATEGORICAL"


class PolicyDivergence(RuntimeError):
    pass


def action_mode_for(scheme: str) -> str:
    return BETA_CATEGORICAL if scheme.upper() == "LIIS" else QUERY_GAUSSIAN


@dataclass
class PolicyAction:
    query: Optional[torch.Tensor]
    beta_index: Optional[int]
    log_prob: float
    value_estimate: float

    @property
    def value(self):
        return self.query if self.query is not None else self.beta_index


class PolicyNetwork(nn.Module):
    """GRU core over step tokens, an MLP action head and a separate value head."""

    def __init__(
        self,
        input_dim: int,
        hidden: int = 64,
        action_mode: str = QUERY_GAUSSIAN,
        sigma: float = 0.1,
        beta_grid: Sequence[float] = DEFAULT_BETA_GRID,
    ):
        super().__init__()
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        if action_mode not in (QUERY_GAUSSIAN, BETA_CATEGORICAL):
            raise ValueError(f"unknown action mode {action_mode!r}")
        self.input_dim = input_dim
        self.hidden = hidden
        self.action_mode = action_mode
        self.sigma = float(sigma)
        self.beta_grid = tuple(float(b) for b in beta_grid)
        out = input_dim if action_mode == QUERY_GAUSSIAN else len(self.beta_grid)
        self.rnn = nn.GRUCell(input_dim, hidden)
        self.action_head = nn.Sequential(nn.Linear(hidden, hidden), nn.Tanh(), nn.Linear(hidden, out))
        self.value_head = nn.Linear(hidden, 1)

    def initial_hidden(self, dtype=torch.float32) -> torch.Tensor:
        return torch.zeros(self.hidden, dtype=dtype)

    def distribution(self, hidden: torch.Tensor):
        params = self.action_head(hidden)
        if not torch.all(torch.isfinite(params)):
            raise PolicyDivergence("policy divergence")
        if self.action_mode == QUERY_GAUSSIAN:
            return Normal(params, torch.full_like(params, self.sigma))
        return Categorical(logits=params)

    def log_prob(self, dist, action: torch.Tensor) -> torch.Tensor:
        lp = dist.log_prob(action)
        return lp.sum(-1) if self.action_mode == QUERY_GAUSSIAN else lp

    def entropy(self, dist) -> torch.Tensor:
        ent = dist.entropy()
        return ent.sum(-1) if self.action_mode == QUERY_GAUSSIAN else ent

    def step(
        self,
        hidden: torch.Tensor,
        u_t: torch.Tensor,
        generator: Optional[torch.Generator] = None,
        deterministic: bool = False,
    ) -> tuple[PolicyAction, torch.Tensor]:
        with torch.no_grad():
            new_hidden = self.rnn(u_t.unsqueeze(0), hidden.unsqueeze(0)).squeeze(0)
            if not torch.all(torch.isfinite(new_hidden)):
                raise PolicyDivergence("policy divergence")
            dist = self.distribution(new_hidden)
            value = float(self.value_head(new_hidden))
            if self.action_mode == QUERY_GAUSSIAN:
                mu = dist.mean
                if deterministic:
                    a = mu.clone()
                else:
                    noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
                    a = mu + self.sigma * noise
                lp = float(self.log_prob(dist, a))
                action = PolicyAction(a, None, lp, value)
            else:
                if deterministic:
                    idx = int(torch.argmax(dist.probs))
                else:
                    idx = int(torch.multinomial(dist.probs, 1, generator=generator))
                lp = float(self.log_prob(dist, torch.tensor(idx)))
                action = PolicyAction(None, idx, lp, value)
        if not math.isfinite(action.log_prob):
            raise PolicyDivergence("policy divergence")
        return action, new_hidden

    def evaluate(self, inputs: torch.Tensor, actions: torch.Tensor):
        """Re-run the recurrence over an episode; returns per-step log-probs, entropies and values."""
        lp, ent, val = self.evaluate_padded(inputs.unsqueeze(0), actions.unsqueeze(0))
        return lp[0], ent[0], val[0]

    def evaluate_padded(self, inputs: torch.Tensor, actions: torch.Tensor):
        """Batched over episodes: ``inputs`` is (N, K, D) zero-padded past each episode's end.

        Padding only follows real steps, so it never feeds back into them; callers mask it out.
        """
        n, k, _ = inputs.shape
        h = torch.zeros(n, self.hidden, dtype=inputs.dtype)
        hs = []
        for t in range(k):
            h = self.rnn(inputs[:, t], h)
            hs.append(h)
        hs = torch.stack(hs, dim=1)
        dist = self.distribution(hs)
        return self.log_prob(dist, actions), self.entropy(dist), self.value_head(hs).squeeze(-1)


# ---------------------------------------------------------------- rewards


@dataclass
class RewardRecord:
    penalties: np.ndarray
    reward_magnitude: float
    correct: int
    step_rewards: np.ndarray


def compute_penalties(h_cls, tokens) -> np.ndarray:
    """Cosine similarity of the class embedding with every step token."""
    return cosine_to(np.asarray(h_cls, dtype=np.float64), np.asarray(tokens, dtype=np.float64))


def compute_feedback(correct: int, r_star: float, penalties) -> np.ndarray:
    base = float(r_star) if correct else 0.0
    return base - np.asarray(penalties, dtype=np.float64)


def reward_record(correct: int, r_star: float, penalties, use_penalty: bool = True) -> RewardRecord:
    pen = np.asarray(penalties, dtype=np.float64)
    if not use_penalty:
        pen = np.zeros_like(pen)
    return RewardRecord(pen, float(r_star), int(correct), compute_feedback(correct, r_star, pen))


# ---------------------------------------------------------------- PPO


@dataclass
class Episode:
    inputs: torch.Tensor  # (K, D) policy inputs
    actions: torch.Tensor  # (K, D) queries or (K,) grid indices
    log_probs: torch.Tensor  # (K,)
    values: torch.Tensor  # (K,)
    rewards: torch.Tensor  # (K,)
    returns: Optional[torch.Tensor] = None
    advantages: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TrajectoryBuffer:
    episodes: list = field(default_factory=list)

    def add(self, episode: Episode) -> None:
        if len(episode):
            self.episodes.append(episode)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def num_steps(self) -> int:
        return sum(len(e) for e in self.episodes)

    def clear(self) -> None:
        self.episodes.clear()


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def compute_returns_and_advantages(buffer: TrajectoryBuffer, gamma: float = 1.0) -> TrajectoryBuffer:
    if not buffer.episodes:
        return buffer
    for ep in buffer.episodes:
        ep.returns = torch.as_tensor(discounted_returns(ep.rewards.numpy(), gamma), dtype=ep.values.dtype)
        ep.advantages = ep.returns - ep.values
    adv = torch.cat([ep.advantages for ep in buffer.episodes])
    mean = adv.mean()
    std = adv.std(unbiased=False).clamp_min(1e-8) if adv.numel() > 1 else adv.new_tensor(1e-8)
    for ep in buffer.episodes:
        ep.advantages = (ep.advantages - mean) / std
    return buffer


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    epochs: int = 4
    gamma: float = 1.0
    batch: int = 8
    lr: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: Optional[float] = None

    def validate(self) -> None:
        if not 0 < self.clip_eps < 1:
            raise ValueError("ppo.clip_eps must lie in (0, 1)")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("ppo.epochs and ppo.batch must be >= 1")
        if not 0 <= self.gamma <= 1:
            raise ValueError("ppo.gamma must lie in [0, 1]")


def ppo_loss(policy: PolicyNetwork, buffer: TrajectoryBuffer, clip_eps: float, value_coef=0.5, entropy_coef=0.01):
    """Negative clipped surrogate plus value and entropy terms, averaged over all buffered steps."""
    eps = buffer.episodes
    k = max(len(e) for e in eps)
    dtype = eps[0].inputs.dtype
    inputs = torch.zeros(len(eps), k, eps[0].inputs.shape[1], dtype=dtype)
    actions = torch.zeros((len(eps), k, *eps[0].actions.shape[1:]), dtype=eps[0].actions.dtype)
    mask = torch.zeros(len(eps), k, dtype=torch.bool)
    for i, e in enumerate(eps):
        inputs[i, : len(e)] = e.inputs
        actions[i, : len(e)] = e.actions
        mask[i, : len(e)] = True
    lp, ent, val = policy.evaluate_padded(inputs, actions)
    new_lp, ent, val = lp[mask], ent[mask], val[mask]
    old_lp = torch.cat([ep.log_probs for ep in buffer.episodes]).to(new_lp.dtype)
    adv = torch.cat([ep.advantages for ep in buffer.episodes]).to(new_lp.dtype)
    ret = torch.cat([ep.returns for ep in buffer.episodes]).to(new_lp.dtype)

    ratio = torch.exp(new_lp - old_lp)
    surrogate = torch.min(ratio * adv, torch.clamp(ratio, 1 - clip_eps, 1 + clip_eps) * adv).mean()
    value_loss = ((val - ret) ** 2).mean()
    entropy = ent.mean()
    loss = -surrogate + value_coef * value_loss - entropy_coef * entropy
    stats = {
        "ratio_mean": ratio.mean().item(),
        "clip_fraction": ((ratio - 1).abs() > clip_eps).to(torch.float64).mean().item(),
        "surrogate": surrogate.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "loss": loss.item(),
    }
    return loss, stats


def ppo_update(policy: PolicyNetwork, optimizer, buffer: TrajectoryBuffer, config: PPOConfig) -> dict:
    """Run ``config.epochs`` full-batch PPO steps; returns first- and last-epoch statistics."""
    if buffer.episodes and buffer.episodes[0].advantages is None:
        compute_returns_and_advantages(buffer, config.gamma)
    history = []
    for _ in range(config.epochs):
        loss, stats = ppo_loss(policy, buffer, config.clip_eps, config.value_coef, config.entropy_coef)
        if not torch.isfinite(loss):
            raise PolicyDivergence("PPO divergence")
        optimizer.zero_grad()
        loss.backward()
        if config.max_grad_norm:
            nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
        optimizer.step()
        history.append(stats)
    out = {f"first_{k}": v for k, v in history[0].items()}
    out.update({f"last_{k}": v for k, v in history[-1].items()})
    out["steps"] = buffer.num_steps
    return out
