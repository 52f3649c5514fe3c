"""One PAMIL network: sampling policy, selection fusion and class-token classifier, run per bag."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .core import BagRecord
from .policy import BETA_CATEGORICAL, Episode, PolicyNetwork, action_mode_for
from .sampling import (
    EpisodeState,
    baseline_grouping,
    ghss_select,
    gmss_select,
    init_episode,
    liis_select,
    median_coord_distance,
)
from .sffr import SFFR
from .tcm import TCM, BagPrediction


@dataclass
class EpisodeResult:
    bag_id: str
    label: int
    groups: list
    tokens: list
    prediction: BagPrediction
    policy_episode: Optional[Episode] = None
    trm_rows: list = field(default_factory=list)

    @property
    def score(self) -> float:
        return self.prediction.score.item()

    @property
    def num_steps(self) -> int:
        return len(self.tokens)

    def instance_attention(self, num_instances: int) -> np.ndarray:
        """Class-token attention on each step, spread over that step's instances by the group encoder."""
        attn = self.prediction.attention
        t = len(self.tokens)
        if attn is None:
            step_w = np.full(t, 1.0 / t)
        else:
            step_w = attn[0, 1:].detach().cpu().numpy().astype(np.float64)
        out = np.zeros(num_instances)
        for w, idx, row in zip(step_w, self.groups, self.trm_rows):
            out[idx] = w * row
        return out


class PAMIL(nn.Module):
    def __init__(self, config: RunConfig, dim: int, max_positions: int):
        super().__init__()
        self.config = config
        self.dim = dim
        self.max_positions = max_positions
        m = config.model
        self.sffr = SFFR(dim, m.heads, max_positions)
        self.tcm = TCM(dim, m.heads, m.aggregator)
        self.policy = None
        if config.sampler.is_dpis:
            self.policy = PolicyNetwork(
                dim,
                m.policy_hidden,
                action_mode_for(config.sampler.scheme),
                config.action.sigma,
                config.sampler.beta_grid,
            )
        self._tau_cache: dict = {}
        self._group_cache: dict = {}

    def classifier_parameters(self):
        return list(self.sffr.parameters()) + list(self.tcm.parameters())

    def _tau(self, bag: BagRecord) -> float:
        if self.config.sampler.ghss_tau is not None:
            return self.config.sampler.ghss_tau
        if bag.bag_id not in self._tau_cache:
            self._tau_cache[bag.bag_id] = median_coord_distance(bag.coords)
        return self._tau_cache[bag.bag_id]

    def _baseline_groups(self, bag: BagRecord, seed: int):
        cfg = self.config.sampler
        if cfg.scheme in ("POSITION", "KMEANS"):
            # deterministic per bag; cache across epochs
            key = bag.bag_id
            if key not in self._group_cache:
                self._group_cache[key] = baseline_grouping(bag, cfg, seed=self.config.seed)
            return self._group_cache[key]
        return baseline_grouping(bag, cfg, seed=seed)

    def run_episode(self, bag: BagRecord, seed: int, explore: bool = True, keep_attention: bool = False) -> EpisodeResult:
        cfg = self.config.sampler
        seed = int(seed) % (2**63)
        gen = torch.Generator().manual_seed(seed)
        dtype = self.sffr.init_token.dtype

        policy_inputs, actions, log_probs, values = [], [], [], []
        if cfg.is_dpis:
            state, group = init_episode(bag, cfg, seed)
            n_steps = state.num_steps
            hidden = self.policy.initial_hidden(dtype)
            fixed = None
        else:
            fixed = self._baseline_groups(bag, seed)
            n_steps = len(fixed)
            group = fixed[0]

        u_prev = self.sffr.init_token
        tokens, groups, trm_rows = [], [], []
        for t in range(n_steps):
            if fixed is not None:
                group = fixed[t]
            feats = torch.from_numpy(group.features).to(dtype)
            u_t, trm_attn, _ = self.sffr(u_prev, feats, tokens)
            tokens.append(u_t)
            groups.append(group.indices)
            if keep_attention:
                trm_rows.append(trm_attn[0, 1:].detach().cpu().numpy().astype(np.float64))
            if fixed is None and t < n_steps - 1:
                x = u_t.detach()
                action, hidden = self.policy.step(hidden, x, gen, deterministic=not explore)
                policy_inputs.append(x)
                log_probs.append(action.log_prob)
                values.append(action.value_estimate)
                group = self._select(state, action, x, bag)
                actions.append(action.query if action.query is not None else action.beta_index)
            u_prev = u_t

        prediction = self.tcm(torch.stack(tokens))
        episode = None
        if policy_inputs:
            if self.policy.action_mode == BETA_CATEGORICAL:
                act = torch.tensor(actions, dtype=torch.long)
            else:
                act = torch.stack(actions)
            episode = Episode(
                inputs=torch.stack(policy_inputs),
                actions=act,
                log_probs=torch.tensor(log_probs, dtype=dtype),
                values=torch.tensor(values, dtype=dtype),
                rewards=torch.zeros(len(policy_inputs), dtype=dtype),
            )
        return EpisodeResult(bag.bag_id, bag.label, groups, tokens, prediction, episode, trm_rows)

    def _select(self, state: EpisodeState, action, u_t: torch.Tensor, bag: BagRecord):
        cfg = self.config.sampler
        if cfg.scheme == "GMSS":
            return gmss_select(action.query.cpu().numpy(), state)
        if cfg.scheme == "GHSS":
            return ghss_select(
                action.query.cpu().numpy(), state, state.selected_centroid, cfg.ghss_alpha, self._tau(bag)
            )
        beta = self.policy.beta_grid[action.beta_index]
        return liis_select(u_t.cpu().numpy(), beta, state)
