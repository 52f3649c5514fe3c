"""Sequential instance selection over a bag (GMSS / GHSS / LIIS) and fixed pseudo-bag groupings.

All selection rules rank the still-unselected instances, take the best
``min(M, remaining)`` and break exact ties by the lower instance index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .core import BagRecord

DPIS_SCHEMES = ("GMSS", "GHSS", "LIIS")
BASELINE_SCHEMES = ("RANDOM", "POSITION", "KMEANS", "RANDOM_GROUP")
SCHEMES = DPIS_SCHEMES + BASELINE_SCHEMES

DEFAULT_BETA_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass
class SamplerConfig:
    scheme: str = "LIIS"
    group_size: int = 512
    ghss_alpha: float = 0.5
    ghss_tau: Optional[float] = None  # None: median pairwise coordinate distance of the bag
    beta_grid: tuple = DEFAULT_BETA_GRID
    n_groups: int = 10
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4

    def __post_init__(self):
        self.scheme = self.scheme.upper()
        self.beta_grid = tuple(float(b) for b in self.beta_grid)

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if not 0.0 <= self.ghss_alpha <= 1.0:
            raise ValueError("ghss_alpha must lie in [0, 1]")
        if self.ghss_tau is not None and self.ghss_tau <= 0:
            raise ValueError("ghss_tau must be > 0")
        grid = np.asarray(self.beta_grid)
        if grid.size == 0 or np.any(grid < 0) or np.any(grid > 1) or np.any(np.diff(grid) <= 0):
            raise ValueError("beta_grid must be strictly increasing values in [0, 1]")
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")

    @property
    def is_dpis(self) -> bool:
        return self.scheme in DPIS_SCHEMES


@dataclass
class SampledGroup:
    indices: np.ndarray
    features: np.ndarray
    coords: np.ndarray

    @classmethod
    def from_bag(cls, bag: BagRecord, indices) -> "SampledGroup":
        idx = np.asarray(indices, dtype=np.int64)
        return cls(idx, bag.features[idx], bag.coords[idx])

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class EpisodeState:
    bag: BagRecord
    group_size: int
    num_steps: int
    step: int = 0
    available: np.ndarray = field(default=None, repr=False)
    past_tokens: list = field(default_factory=list)
    _coord_sum: np.ndarray = field(default=None, repr=False)
    _n_selected: int = 0

    def __post_init__(self):
        if self.available is None:
            self.available = np.ones(self.bag.num_instances, dtype=bool)
        if self._coord_sum is None:
            self._coord_sum = np.zeros(2)

    @property
    def remaining_indices(self) -> np.ndarray:
        return np.flatnonzero(self.available)

    @property
    def done(self) -> bool:
        return not self.available.any()

    @property
    def selected_centroid(self) -> np.ndarray:
        if self._n_selected == 0:
            return self.bag.coords.astype(np.float64).mean(axis=0)
        return self._coord_sum / self._n_selected

    def take(self, indices: np.ndarray) -> SampledGroup:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            raise ValueError("no instances left to select")
        if not self.available[indices].all() or len(np.unique(indices)) != len(indices):
            raise ValueError("selected indices must be distinct and still available")
        self.available[indices] = False
        self._coord_sum += self.bag.coords[indices].astype(np.float64).sum(axis=0)
        self._n_selected += len(indices)
        self.step += 1
        return SampledGroup.from_bag(self.bag, indices)


def num_steps(num_instances: int, group_size: int) -> int:
    return math.ceil(num_instances / group_size)


def init_episode(bag: BagRecord, config: SamplerConfig, rng_seed) -> tuple[EpisodeState, SampledGroup]:
    """Start an episode: the first group is a uniform random subset of size ``min(M, B)``."""
    m = config.group_size
    if m < 1:
        raise ValueError("group_size must be >= 1")
    state = EpisodeState(bag=bag, group_size=m, num_steps=num_steps(bag.num_instances, m))
    rng = np.random.default_rng(rng_seed)
    first = rng.choice(bag.num_instances, size=min(m, bag.num_instances), replace=False)
    return state, state.take(first)


def cosine_to(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosine of each row with ``query``; any zero-norm operand gives -1."""
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(rows, dtype=np.float64)
    qn = np.linalg.norm(q)
    rn = np.linalg.norm(r, axis=1)
    out = np.full(r.shape[0], -1.0)
    ok = (rn > 0) & (qn > 0)
    out[ok] = (r[ok] @ q) / (rn[ok] * qn)
    return out


def _top_by_score(state: EpisodeState, candidates: np.ndarray, score: np.ndarray) -> SampledGroup:
    k = min(state.group_size, candidates.size)
    order = np.lexsort((candidates, -score))[:k]
    return state.take(candidates[order])


def gmss_select(query, state: EpisodeState) -> SampledGroup:
    rem = state.remaining_indices
    return _top_by_score(state, rem, cosine_to(query, state.bag.features[rem]))


def ghss_scores(query, features, coords, centroid, alpha: float, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("ghss_tau must be > 0")
    dist = np.linalg.norm(np.asarray(coords, dtype=np.float64) - np.asarray(centroid, dtype=np.float64), axis=1)
    return alpha * cosine_to(query, features) + (1.0 - alpha) * np.exp(-dist / tau)


def ghss_select(query, state: EpisodeState, selected_centroid, alpha: float, tau: float) -> SampledGroup:
    rem = state.remaining_indices
    score = ghss_scores(query, state.bag.features[rem], state.bag.coords[rem], selected_centroid, alpha, tau)
    return _top_by_score(state, rem, score)


def liis_query(u_t, beta: float, remaining_features) -> np.ndarray:
    mean_rem = np.asarray(remaining_features, dtype=np.float64).mean(axis=0)
    return (1.0 - beta) * np.asarray(u_t, dtype=np.float64) + beta * mean_rem


def liis_select(u_t, beta: float, state: EpisodeState) -> SampledGroup:
    rem = state.remaining_indices
    feats = state.bag.features[rem]
    q = liis_query(u_t, beta, feats)
    dist = np.linalg.norm(feats.astype(np.float64) - q, axis=1)
    return _top_by_score(state, rem, -dist)


def median_coord_distance(coords) -> float:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(coords)))
    return med if med > 0 else 1.0


def baseline_grouping(bag: BagRecord, config: SamplerConfig, seed=0) -> list[SampledGroup]:
    """Fixed pseudo-bags; every scheme partitions ``range(B)`` exactly."""
    n = bag.num_instances
    m = config.group_size
    scheme = config.scheme
    if scheme in ("KMEANS", "RANDOM_GROUP") and config.n_groups > n:
        raise ValueError("more groups than instances")
    rng = np.random.default_rng(seed)
    if scheme == "RANDOM":
        order = rng.permutation(n)
        parts = [order[i : i + m] for i in range(0, n, m)]
    elif scheme == "POSITION":
        order = np.lexsort((np.arange(n), bag.coords[:, 1], bag.coords[:, 0]))
        parts = [order[i : i + m] for i in range(0, n, m)]
    elif scheme == "RANDOM_GROUP":
        parts = np.array_split(rng.permutation(n), config.n_groups)
    elif scheme == "KMEANS":
        parts = kmeans_groups(bag.features, config.n_groups, config.kmeans_max_iter, config.kmeans_tol, seed)
    else:
        raise ValueError(f"{scheme} is not a baseline grouping scheme")
    return [SampledGroup.from_bag(bag, p) for p in parts if len(p)]


def kmeans_groups(features, n_groups: int, max_iter=100, tol=1e-4, seed=0) -> list[np.ndarray]:
    from sklearn.cluster import KMeans

    km = KMeans(
        n_clusters=n_groups,
        init="k-means++",
        n_init=1,
        max_iter=max_iter,
        tol=tol,
        random_state=seed % (2**32),
    )
    labels = km.fit_predict(np.asarray(features, dtype=np.float64))
    groups = [np.flatnonzero(labels == c) for c in range(n_groups)]
    groups = [g for g in groups if g.size]
    groups.sort(key=lambda g: g[0])
    return groups
