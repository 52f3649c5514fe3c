"""Joint training loop: SFFR + TCM by gradient descent on the combined loss, the sampler by PPO."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import checkpoint_load, checkpoint_save
from .config import ConfigError, RunConfig, lambda_at
from .core import BagRecord, DatasetManifest, read_bag_header, read_manifest
from .metrics import binary_metrics
from .model import PAMIL, EpisodeResult
from .policy import PolicyDivergence, TrajectoryBuffer, compute_penalties, compute_returns_and_advantages, ppo_update, reward_record
from .reports import code_version, plot_curves, write_attention_csv, write_csv, write_json
from .sffr import sia_loss
from .synthetic import stable_seed
from .tcm import stl_loss, wsl_loss

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    wsl: float
    stl: float
    sia: float
    total: float
    lambda_stl: float
    lambda_sia: float

    @classmethod
    def combine(cls, wsl: float, stl: float, sia: float, lambda_stl: float, lambda_sia: float) -> "LossBreakdown":
        return cls(wsl, stl, sia, wsl + lambda_stl * stl + lambda_sia * sia, lambda_stl, lambda_sia)


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("PAMIL_THREADS", "1")))
    except ValueError:
        return 1


def max_group_needed(config: RunConfig, bag_sizes: Sequence[int]) -> int:
    if config.model.max_positions:
        return int(config.model.max_positions)
    m = config.sampler.group_size
    if config.sampler.scheme in ("KMEANS", "RANDOM_GROUP"):
        return max([m, *bag_sizes])
    return m


def build_model(config: RunConfig, dim: int, max_positions: int) -> PAMIL:
    # parameter init uses its own RNG stream so module construction order elsewhere cannot shift it
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(stable_seed(config.seed, "init") % (2**63))
        return PAMIL(config, dim, max_positions)


def predict_bags(model: PAMIL, bags: Sequence[BagRecord], seed: int, keep_attention=False) -> list[EpisodeResult]:
    """Deterministic evaluation episodes (mean / argmax policy actions)."""
    model.eval()

    def one(bag):
        with torch.no_grad():
            return model.run_episode(bag, stable_seed(seed, "eval", bag.bag_id), explore=False, keep_attention=keep_attention)

    threads = eval_threads()
    if threads > 1 and len(bags) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, bags))
    else:
        results = [one(b) for b in bags]
    model.train()
    return results


def per_bag_rows(results: Sequence[EpisodeResult]) -> list[dict]:
    rows = []
    for r in results:
        rows.append(
            {
                "bag_id": r.bag_id,
                "label": r.label,
                "score": r.score,
                "predicted": int(r.score >= 0.5),
                "fused_score": r.prediction.fused_score,
                "fused_label_conditioned": r.prediction.fused_label_conditioned(r.label),
                "num_steps": r.num_steps,
                "max_step_score": float(r.prediction.step_scores.max()),
            }
        )
    return rows


def metrics_from_results(results: Sequence[EpisodeResult]) -> dict:
    if not results:
        raise ValueError("split is empty")
    return binary_metrics([r.label for r in results], [r.score for r in results])


class Trainer:
    def __init__(self, config: RunConfig, manifest: Optional[DatasetManifest] = None):
        config.validate()
        self.config = config
        if manifest is None:
            if not config.manifest:
                raise ConfigError("no manifest given")
            manifest = read_manifest(config.manifest)
        self.manifest = manifest
        self.train_bags = manifest.load_split("train")
        self.val_bags = manifest.load_split("val")
        if not self.train_bags:
            raise ConfigError("train split is empty")
        dims = {b.feature_dim for b in self.train_bags + self.val_bags}
        if len(dims) != 1:
            raise ConfigError(f"inconsistent feature dimensions {sorted(dims)}")
        dim = dims.pop()
        if config.model.dim is not None and config.model.dim != dim:
            raise ConfigError(f"model.dim {config.model.dim} differs from the bags' feature dimension {dim}")
        if dim % config.model.heads:
            raise ConfigError(f"feature dimension {dim} is not divisible by model.heads {config.model.heads}")
        sizes = [read_bag_header(manifest.resolve(e))[0] for e in manifest.entries]
        self.model = build_model(config, dim, max_group_needed(config, sizes))
        self.optimizer = torch.optim.Adamax(
            self.model.classifier_parameters(), lr=config.optim.lr, weight_decay=config.optim.weight_decay
        )
        self.policy_optimizer = None
        if self.model.policy is not None:
            self.policy_optimizer = torch.optim.Adam(self.model.policy.parameters(), lr=config.ppo.lr)
        self.rng = np.random.default_rng(stable_seed(config.seed, "train-order"))
        self.buffer = TrajectoryBuffer()
        self.epoch = 0
        self.best_val_auc = -math.inf
        self.best_val_accuracy = -math.inf
        self.best_epoch: Optional[int] = None
        self.history: list[dict] = []
        self.loss_log: list[LossBreakdown] = []
        self.reward_log: list = []
        self.keep_logs = False

    # ------------------------------------------------------------ one epoch

    def train_epoch(self) -> dict:
        cfg = self.config
        lam_stl, lam_sia = lambda_at(cfg.schedule, self.epoch, cfg.total_epochs)
        n = len(self.train_bags)
        order = self.rng.permutation(n)
        seeds = self.rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)
        sums = {"wsl": 0.0, "stl": 0.0, "sia": 0.0, "total": 0.0, "correct": 0, "reward": 0.0}
        ppo_stats = []
        self.model.train()
        for i, seed in zip(order, seeds):
            bag = self.train_bags[i]
            res = self.model.run_episode(bag, int(seed), explore=True)
            pred = res.prediction
            wsl = wsl_loss(pred.score, bag.label)
            stl = stl_loss(pred.step_scores, bag.label)
            sia = sia_loss(self.model.sffr.predictor, res.tokens)
            total = wsl + lam_stl * stl + lam_sia * sia
            if not torch.isfinite(total):
                raise TrainingDivergence(f"non-finite loss on bag {bag.bag_id} at epoch {self.epoch}")
            self.optimizer.zero_grad()
            total.backward()
            self.optimizer.step()

            lb = LossBreakdown.combine(wsl.item(), stl.item(), sia.item(), lam_stl, lam_sia)
            if self.keep_logs:
                self.loss_log.append(lb)
            for k in ("wsl", "stl", "sia", "total"):
                sums[k] += getattr(lb, k)
            correct = int((pred.score.item() >= 0.5) == bool(bag.label))
            sums["correct"] += correct

            if self.model.policy is not None:
                penalties = compute_penalties(
                    pred.cls_embedding.detach().cpu().numpy(),
                    torch.stack(res.tokens).detach().cpu().numpy(),
                )
                rec = reward_record(correct, cfg.reward.r_star, penalties, cfg.reward.use_penalty)
                if self.keep_logs:
                    self.reward_log.append(rec)
                sums["reward"] += float(rec.step_rewards.mean())
                if res.policy_episode is not None:
                    # action k chose group k+1, so it is credited with that group's feedback
                    res.policy_episode.rewards = torch.as_tensor(rec.step_rewards[1:], dtype=res.policy_episode.values.dtype)
                    self.buffer.add(res.policy_episode)
                if len(self.buffer) >= cfg.ppo.batch:
                    ppo_stats.append(self._ppo_step())
        if len(self.buffer):
            ppo_stats.append(self._ppo_step())
        self.epoch += 1
        row = {
            "epoch": self.epoch,
            "lambda_stl": lam_stl,
            "lambda_sia": lam_sia,
            **{k: sums[k] / n for k in ("wsl", "stl", "sia", "total")},
            "train_accuracy": sums["correct"] / n,
            "mean_reward": sums["reward"] / n,
        }
        if ppo_stats:
            for key in ("last_ratio_mean", "last_clip_fraction", "last_value_loss", "first_clip_fraction"):
                row[f"ppo_{key}"] = float(np.mean([s[key] for s in ppo_stats]))
        return row

    def _ppo_step(self) -> dict:
        compute_returns_and_advantages(self.buffer, self.config.ppo.gamma)
        stats = ppo_update(self.model.policy, self.policy_optimizer, self.buffer, self.config.ppo)
        self.buffer.clear()
        return stats

    # ------------------------------------------------------------ loop

    def fit(self, out_dir=None, stop_after: Optional[int] = None) -> list[dict]:
        """Train until ``optim.epochs`` (or ``stop_after`` total epochs); writes artifacts to ``out_dir``."""
        out = Path(out_dir or self.config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        target = self.config.optim.epochs if stop_after is None else min(stop_after, self.config.optim.epochs)
        while self.epoch < target:
            try:
                row = self.train_epoch()
            except (PolicyDivergence, TrainingDivergence):
                log.error("training diverged at epoch %d; last good state is in checkpoint_last.bin", self.epoch)
                raise
            if self.val_bags:
                val = metrics_from_results(predict_bags(self.model, self.val_bags, self.config.seed))
                row.update({f"val_{k}": v for k, v in val.items() if k not in ("threshold", "n")})
                key = (val["auc"], val["accuracy"])
            else:
                key = (row["train_accuracy"], row["train_accuracy"])
            self.history.append(row)
            # ties on AUC go to higher accuracy, then to the later epoch
            if not math.isnan(key[0]) and key >= (self.best_val_auc, self.best_val_accuracy):
                self.best_val_auc, self.best_val_accuracy = key
                self.best_epoch = self.epoch
                self.save(out / "checkpoint.bin")
            self.save(out / "checkpoint_last.bin")
            # column order from the fresh row: rows restored from a checkpoint come back key-sorted
            write_csv(out / "metrics.csv", self.history, fieldnames=list(row))
            log.info("epoch %d %s", self.epoch, {k: round(v, 4) for k, v in row.items() if isinstance(v, float)})
        if self.best_epoch is None:
            self.save(out / "checkpoint.bin")
        if self.history:
            plot_curves(self.history, out / "curves.svg")
        return self.history

    # ------------------------------------------------------------ state

    def state(self) -> dict:
        tensors = {"model": self.model.state_dict(), "optimizer": self.optimizer.state_dict()}
        if self.policy_optimizer is not None:
            tensors["policy_optimizer"] = self.policy_optimizer.state_dict()
        return {
            "tensors": tensors,
            "epoch": self.epoch,
            "rng_state": self.rng.bit_generator.state,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "dim": self.model.dim,
            "max_positions": self.model.max_positions,
            "best_val_auc": None if math.isinf(self.best_val_auc) else self.best_val_auc,
            "best_val_accuracy": None if math.isinf(self.best_val_accuracy) else self.best_val_accuracy,
            "best_epoch": self.best_epoch,
            "history": self.history,
            "code_version": code_version(),
        }

    def save(self, path) -> None:
        checkpoint_save(self.state(), path)

    def load_state(self, state: dict) -> None:
        t = state["tensors"]
        self.model.load_state_dict(t["model"])
        self.optimizer.load_state_dict(t["optimizer"])
        if self.policy_optimizer is not None and "policy_optimizer" in t:
            self.policy_optimizer.load_state_dict(t["policy_optimizer"])
        self.epoch = int(state["epoch"])
        self.rng.bit_generator.state = state["rng_state"]
        self.best_val_auc = -math.inf if state["best_val_auc"] is None else state["best_val_auc"]
        self.best_val_accuracy = -math.inf if state["best_val_accuracy"] is None else state["best_val_accuracy"]
        self.best_epoch = state["best_epoch"]
        self.history = list(state["history"])

    @classmethod
    def resume(cls, path, config: Optional[RunConfig] = None, manifest: Optional[DatasetManifest] = None) -> "Trainer":
        state = checkpoint_load(path, expected_config_hash=config.hash() if config else None)
        cfg = config or RunConfig.from_dict(state["config"])
        trainer = cls(cfg, manifest)
        trainer.load_state(state)
        return trainer


def load_model(path) -> tuple[PAMIL, dict]:
    state = checkpoint_load(path)
    config = RunConfig.from_dict(state["config"])
    model = build_model(config, state["dim"], state["max_positions"])
    model.load_state_dict(state["tensors"]["model"])
    return model, state


def evaluate(checkpoint, manifest, split: str = "test", out_dir=None, attention: bool = True) -> dict:
    """Metrics on ``split`` from the class-token score; writes per-bag tables when ``out_dir`` is given."""
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    model, state = load_model(checkpoint)
    bags = manifest.load_split(split)
    if not bags:
        raise ValueError(f"split {split!r} is empty")
    results = predict_bags(model, bags, model.config.seed, keep_attention=attention and out_dir is not None)
    metrics = metrics_from_results(results)
    report = {
        "split": split,
        "metrics": metrics,
        "checkpoint_epoch": state["epoch"],
        "config": state["config"],
        "code_version": code_version(),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "per_bag.csv", per_bag_rows(results))
        if attention:
            for bag, res in zip(bags, results):
                write_attention_csv(out / f"attention_{bag.bag_id}.csv", res.instance_attention(bag.num_instances))
        write_json(out / "metrics.json", report)
    report["per_bag"] = per_bag_rows(results)
    return report


def train(config: RunConfig, manifest: Optional[DatasetManifest] = None, out_dir=None, attention: bool = False) -> dict:
    """Full run: fit, then evaluate the best-validation checkpoint on val and test."""
    out = Path(out_dir or config.out_dir)
    trainer = Trainer(config, manifest)
    history = trainer.fit(out)
    ckpt = out / "checkpoint.bin"
    report = {
        "config": config.to_dict(),
        "code_version": code_version(),
        "best_epoch": trainer.best_epoch,
        "epochs_run": trainer.epoch,
        "history": history,
    }
    for split in ("val", "test"):
        if trainer.manifest.split(split):
            sub = out / split if split == "val" else out
            r = evaluate(ckpt, trainer.manifest, split, out_dir=sub, attention=attention and split == "test")
            report[split] = r["metrics"]
    write_json(out / "metrics.json", report)
    return report
