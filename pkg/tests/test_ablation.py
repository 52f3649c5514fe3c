import pytest

from pamil.ablation import AXES, ablate, parse_values, setting_overrides
from pamil.config import ConfigError, RunConfig
from pamil.reports import read_csv


def base(tmp_path):
    return RunConfig(out_dir=str(tmp_path)).replace(
        **{"sampler.group_size": 8, "sampler.n_groups": 3, "optim.epochs": 1, "ppo.batch": 2}
    )


def test_unknown_axis(tmp_path):
    with pytest.raises(ConfigError, match="unknown ablation axis"):
        ablate(base(tmp_path), "colour")
    with pytest.raises(ConfigError):
        setting_overrides("colour", 1)
    with pytest.raises(ConfigError):
        setting_overrides("loss", "nope")


def test_overrides():
    assert setting_overrides("group_size", "512") == {"sampler.group_size": 512}
    wsl = setting_overrides("loss", "wsl")
    assert all(v == 0.0 for v in wsl.values()) and len(wsl) == 4
    assert setting_overrides("loss", "all") == {}
    assert set(setting_overrides("loss", "wsl+sia")) == {"schedule.lambda_stl_start", "schedule.lambda_stl_end"}
    assert setting_overrides("reward", "none") == {"reward.r_star": 0.0, "reward.use_penalty": False}
    assert setting_overrides("reward", "penalty") == {"reward.r_star": 0.0, "reward.use_penalty": True}
    assert setting_overrides("reward", "r_star")["reward.use_penalty"] is False
    assert parse_values("group_size", "128, 512") == [128, 512]
    assert parse_values("scheme", None) == list(AXES["scheme"])


def test_scheme_axis_rows(tiny_dataset, tmp_path):
    rows = ablate(base(tmp_path), "scheme", ["GMSS", "GHSS", "LIIS", "RANDOM_GROUP"], seeds=(0, 1), manifest=tiny_dataset)
    assert [r["setting"] for r in rows] == ["GMSS", "GHSS", "LIIS", "RANDOM_GROUP"]
    assert {r["seeds"] for r in rows} == {"0;1"}
    runs = read_csv(tmp_path / "ablation_runs.csv")
    assert len(runs) == 8 and {r["seed"] for r in runs} == {"0", "1"}
    assert len(read_csv(tmp_path / "ablation.csv")) == 4
    assert (tmp_path / "ablation.svg").exists()
    for r in rows:
        assert 0 <= r["accuracy"] <= 1


def test_loss_axis_runs(tiny_dataset, tmp_path):
    rows = ablate(base(tmp_path), "loss", ["wsl", "all"], seeds=(0,), manifest=tiny_dataset)
    assert len(rows) == 2
    cfg = (tmp_path / "loss=wsl" / "seed_0" / "metrics.csv").read_text()
    assert "lambda_stl" in cfg
    first = read_csv(tmp_path / "loss=wsl" / "seed_0" / "metrics.csv")[0]
    assert float(first["total"]) == float(first["wsl"])
