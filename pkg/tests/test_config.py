import json
import math

import pytest
from hypothesis import given, strategies as st

from pamil.config import ConfigError, LossSchedule, RunConfig, lambda_at
from pamil.train import LossBreakdown


def test_lambda_endpoints_and_midpoint():
    s = LossSchedule(1.0, 0.1, 0.1, 0.5)
    assert lambda_at(s, 0, 300) == (1.0, 0.1)
    assert lambda_at(s, 300, 300) == (0.1, 0.5)
    mid = lambda_at(s, 150, 300)
    assert abs(mid[0] - 0.55) < 1e-15 and abs(mid[1] - 0.3) < 1e-15


@given(
    st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.integers(1, 1000)
)
def test_lambda_exact_endpoints_property(a, b, c, d, e):
    s = LossSchedule(a, b, c, d)
    assert lambda_at(s, 0, e) == (a, c)
    assert lambda_at(s, e, e) == (b, d)
    lo, hi = sorted((a, b))
    for k in range(0, e + 1, max(1, e // 7)):
        v = lambda_at(s, k, e)[0]
        assert lo - 1e-12 <= v <= hi + 1e-12


def test_lambda_formula_and_range():
    s = LossSchedule(2.0, 0.0, 0.0, 1.0)
    v = lambda_at(s, 3, 10)
    c = (1 + math.cos(math.pi * 0.3)) / 2
    assert abs(v[0] - 2 * c) < 1e-15 and abs(v[1] - (1 - c)) < 1e-15
    with pytest.raises(ValueError):
        lambda_at(s, 11, 10)
    with pytest.raises(ValueError):
        lambda_at(s, 0, 0)


def test_schedule_total_epochs_override():
    s = LossSchedule(total_epochs=4)
    assert lambda_at(s, 4, 999) == (0.1, 0.5)


def test_loss_breakdown_arithmetic():
    lb = LossBreakdown.combine(0.5, 0.3, 0.1, 1.0, 0.2)
    assert abs(lb.total - 0.82) < 1e-15
    assert LossBreakdown.combine(0.7, 0.3, -0.9, 0.0, 0.0).total == 0.7


def test_config_defaults():
    c = RunConfig()
    assert c.optim.lr == 1e-4 and c.optim.weight_decay == 1e-5 and c.optim.epochs == 300 and c.optim.batch_size == 1
    assert c.ppo.clip_eps == 0.2 and c.ppo.epochs == 4 and c.ppo.batch == 8 and c.ppo.gamma == 1.0
    assert c.reward.r_star == 1.0 and c.action.sigma == 0.1
    assert c.sampler.beta_grid == tuple(i / 10 for i in range(11))
    assert (c.schedule.lambda_stl_start, c.schedule.lambda_stl_end) == (1.0, 0.1)
    assert (c.schedule.lambda_sia_start, c.schedule.lambda_sia_end) == (0.1, 0.5)
    c.validate()


def test_config_json_round_trip(tmp_path):
    c = RunConfig().replace(**{"sampler.scheme": "ghss", "optim.epochs": 3, "seed": 9})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(c.to_dict()))
    back = RunConfig.from_json(p)
    assert back == c and back.hash() == c.hash()
    assert back.sampler.scheme == "GHSS"
    assert RunConfig().hash() != c.hash()


@pytest.mark.parametrize(
    "override",
    [
        {"sampler.scheme": "BOGUS"},
        {"optim.epochs": 0},
        {"optim.batch_size": 4},
        {"ppo.clip_eps": 1.5},
        {"schedule.lambda_sia_end": -1.0},
        {"action.sigma": 0.0},
        {"model.aggregator": "sum"},
        {"sampler.group_size": 0},
    ],
)
def test_config_validation(override):
    with pytest.raises(ConfigError):
        RunConfig().replace(**override).validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"samplr": {}})
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"sampler": {"shceme": "LIIS"}})
