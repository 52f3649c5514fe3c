from __future__ import annotations

import csv
import io
import json
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .core import atomic_write_text


def code_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_csv(path, rows: list[dict], fieldnames=None) -> None:
    if fieldnames is None:
        fieldnames = []
        for r in rows:
            fieldnames.extend(k for k in r if k not in fieldnames)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in fieldnames})
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_attention_csv(path, attention: np.ndarray) -> None:
    lines = ["instance_index,attention_score"]
    lines += [f"{i},{a!r}" for i, a in enumerate(attention.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _floats(rows, key):
    out = []
    for r in rows:
        try:
            out.append(float(r[key]))
        except (KeyError, TypeError, ValueError):
            out.append(float("nan"))
    return out


def plot_curves(metrics_rows: list[dict], path) -> None:
    """Loss curves and validation metrics per epoch, as a standalone SVG."""
    plt = _plt()
    epochs = _floats(metrics_rows, "epoch")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("wsl", "stl", "sia", "total"):
        ax1.plot(epochs, _floats(metrics_rows, key), label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    for key in ("train_accuracy", "val_accuracy", "val_auc"):
        if metrics_rows and key in metrics_rows[0]:
            ax2.plot(epochs, _floats(metrics_rows, key), label=key)
    ax2.set_xlabel("epoch")
    ax2.set_ylim(-0.02, 1.02)
    ax2.legend()
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def plot_ablation(rows: list[dict], path, x_key: str = "setting") -> None:
    plt = _plt()
    labels = [str(r[x_key]) for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("accuracy", "f1", "auc"):
        ax.plot(x, _floats(rows, key), marker="o", label=key)
    ax.set_xticks(x, labels)
    ax.set_xlabel(x_key)
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())
