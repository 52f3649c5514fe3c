"""Planted-signal MIL benchmark: Gaussian background bags with a spatially compact witness disk."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    BagRecord,
    DatasetManifest,
    ManifestEntry,
    atomic_write_text,
    bag_label_from_instances,
    write_bag_file,
    write_manifest,
)


def stable_seed(*parts) -> int:
    """64-bit seed derived from arbitrary parts; stable across processes and platforms."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass
class SyntheticConfig:
    num_bags: dict = field(default_factory=lambda: {"train": 200, "val": 50, "test": 100})
    bag_size_range: tuple = (256, 768)
    feature_dim: int = 32
    witness_rate: float = 0.1
    separation: float = 2.5
    spatial_radius: float = 8.0
    positive_fraction: float = 0.5
    master_seed: int = 0

    def validate(self) -> None:
        b_min, b_max = self.bag_size_range
        if not 1 <= b_min <= b_max:
            raise ValueError("bag_size_range must satisfy 1 <= B_min <= B_max")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not 0.0 < self.witness_rate <= 1.0:
            raise ValueError("witness_rate must lie in (0, 1]")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        if self.spatial_radius <= 0:
            raise ValueError("spatial_radius must be > 0")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must lie in [0, 1]")
        if any(n < 0 for n in self.num_bags.values()):
            raise ValueError("num_bags must be non-negative")
        if self.positive_fraction > 0 and self.witness_rate * b_min < 1:
            raise ValueError("witness rate too low for bag size")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        if "bag_size_range" in d:
            d["bag_size_range"] = tuple(d["bag_size_range"])
        return cls(**d)


def grid_coords(n: int) -> np.ndarray:
    side = math.ceil(math.sqrt(n))
    idx = np.arange(n)
    return np.stack([idx // side, idx % side], axis=1).astype(np.float32)


def witness_direction(config: SyntheticConfig) -> np.ndarray:
    rng = np.random.default_rng(stable_seed(config.master_seed, "witness-direction"))
    e = rng.standard_normal(config.feature_dim)
    return e / np.linalg.norm(e)


def _witness_disk(coords: np.ndarray, k: int, radius: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Pick a center and the k instances closest to it, all within ``radius``."""
    n = coords.shape[0]
    for _ in range(1000):
        center = coords[rng.integers(n)].astype(np.float64)
        dist = np.linalg.norm(coords - center, axis=1)
        order = np.lexsort((np.arange(n), dist))[:k]
        if dist[order[-1]] <= radius:
            return np.sort(order), center
    raise ValueError("spatial radius too small for witness count")


def make_bag(bag_id: str, label: int, config: SyntheticConfig, direction: np.ndarray) -> tuple[BagRecord, dict]:
    rng = np.random.default_rng(stable_seed(config.master_seed, bag_id))
    b_min, b_max = config.bag_size_range
    n = int(rng.integers(b_min, b_max + 1))
    coords = grid_coords(n)
    feats = rng.standard_normal((n, config.feature_dim))
    inst = np.zeros(n, dtype=np.uint8)
    meta = {"bag_id": bag_id, "num_instances": n}
    if label == 1:
        k = math.ceil(config.witness_rate * n)
        witnesses, center = _witness_disk(coords, k, config.spatial_radius, rng)
        feats[witnesses] += config.separation * direction
        inst[witnesses] = 1
        meta["tumor_center"] = center.tolist()
        meta["num_witnesses"] = k
    rec = BagRecord(bag_id, bag_label_from_instances(inst), feats, coords, inst)
    return rec, meta


def generate_synthetic_dataset(config: SyntheticConfig, out_dir) -> DatasetManifest:
    """Write bag files, ``manifest.csv`` and the ``dataset.json`` sidecar under ``out_dir``."""
    config.validate()
    out_dir = Path(out_dir)
    direction = witness_direction(config)
    entries = []
    bags_meta = []
    for split in ("train", "val", "test"):
        n = int(config.num_bags.get(split, 0))
        n_pos = int(round(n * config.positive_fraction))
        for i in range(n):
            bag_id = f"{split}_{i:04d}"
            rec, meta = make_bag(bag_id, int(i < n_pos), config, direction)
            rel = f"bags/{bag_id}.pmlb"
            write_bag_file(rec, out_dir / rel)
            entries.append(ManifestEntry(bag_id, rel, rec.label, split))
            bags_meta.append(meta)
    manifest = DatasetManifest(entries, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    sidecar = {
        "generator": "planted-gaussian-disk",
        "config": asdict(config),
        "master_seed": config.master_seed,
        "witness_direction": direction.tolist(),
        "bags": bags_meta,
    }
    atomic_write_text(out_dir / "dataset.json", json.dumps(sidecar, indent=2))
    return manifest
