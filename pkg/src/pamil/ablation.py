"""Ablation runner: one training run per (setting, seed), summarized into a comparison table."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, RunConfig
from .core import DatasetManifest
from .reports import plot_ablation, write_csv
from .train import train

log = logging.getLogger(__name__)

LOSS_SETTINGS = ("wsl", "wsl+sia", "wsl+stl", "all")
REWARD_SETTINGS = ("none", "r_star", "penalty", "both")
AXES = {
    "group_size": (128, 512, 2048),
    "scheme": ("GMSS", "GHSS", "LIIS", "RANDOM_GROUP"),
    "loss": LOSS_SETTINGS,
    "reward": REWARD_SETTINGS,
}
METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "auc")


def setting_overrides(axis: str, value) -> dict:
    """Dotted config overrides realizing one ablation setting."""
    if axis == "group_size":
        return {"sampler.group_size": int(value)}
    if axis == "scheme":
        return {"sampler.scheme": str(value).upper()}
    if axis == "loss":
        if value not in LOSS_SETTINGS:
            raise ConfigError(f"loss setting must be one of {LOSS_SETTINGS}")
        out = {}
        if value in ("wsl", "wsl+sia"):
            out.update({"schedule.lambda_stl_start": 0.0, "schedule.lambda_stl_end": 0.0})
        if value in ("wsl", "wsl+stl"):
            out.update({"schedule.lambda_sia_start": 0.0, "schedule.lambda_sia_end": 0.0})
        return out
    if axis == "reward":
        if value not in REWARD_SETTINGS:
            raise ConfigError(f"reward setting must be one of {REWARD_SETTINGS}")
        return {
            "reward.r_star": None if value in ("r_star", "both") else 0.0,
            "reward.use_penalty": value in ("penalty", "both"),
        }
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")


def parse_values(axis: str, raw: Optional[str]):
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    if not raw:
        return list(AXES[axis])
    vals = [v.strip() for v in raw.split(",") if v.strip()]
    return [int(v) for v in vals] if axis == "group_size" else vals


def ablate(
    config: RunConfig,
    axis: str,
    values: Optional[Sequence] = None,
    seeds: Sequence[int] = (0, 1, 2),
    out_dir=None,
    manifest: Optional[DatasetManifest] = None,
) -> list[dict]:
    """Train every setting with the same seeds; returns one summary row per setting.

    Writes ``ablation.csv`` (means over seeds), ``ablation_runs.csv`` (one row per run) and
    ``ablation.svg`` under ``out_dir``.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    values = list(AXES[axis]) if values is None else list(values)
    if not values or not seeds:
        raise ConfigError("ablation needs at least one value and one seed")
    out = Path(out_dir or config.out_dir)
    runs, summary = [], []
    for value in values:
        overrides = {k: v for k, v in setting_overrides(axis, value).items() if v is not None}
        per_seed = []
        for seed in seeds:
            cfg = config.replace(**overrides, seed=int(seed))
            run_dir = out / f"{axis}={value}" / f"seed_{seed}"
            log.info("ablation %s=%s seed %d", axis, value, seed)
            report = train(cfg, manifest, out_dir=run_dir)
            metrics = report.get("test") or report.get("val")
            row = {"axis": axis, "setting": value, "seed": int(seed), "best_epoch": report["best_epoch"]}
            row.update({k: metrics[k] for k in METRIC_KEYS})
            runs.append(row)
            per_seed.append(row)
        agg = {"axis": axis, "setting": value, "seeds": ";".join(str(s) for s in seeds), "n_runs": len(per_seed)}
        for k in METRIC_KEYS:
            vals = np.array([r[k] for r in per_seed], dtype=np.float64)
            agg[k] = float(np.mean(vals))
            agg[f"{k}_std"] = float(np.std(vals))
        summary.append(agg)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ablation.csv", summary)
    write_csv(out / "ablation_runs.csv", runs)
    plot_ablation(summary, out / "ablation.svg")
    return summary
