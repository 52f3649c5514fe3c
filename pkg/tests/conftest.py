import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from pamil.core import BagRecord
from pamil.synthetic import SyntheticConfig, generate_synthetic_dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_bag(rng, b=None, d=None, bag_id="bag", with_labels=True, grid=True) -> BagRecord:
    b = int(rng.integers(1, 65)) if b is None else b
    d = int(rng.integers(1, 9)) if d is None else d
    feats = rng.standard_normal((b, d)).astype(np.float32)
    if grid:
        side = int(np.ceil(np.sqrt(b)))
        coords = np.stack([np.arange(b) // side, np.arange(b) % side], axis=1).astype(np.float32)
    else:
        coords = rng.uniform(0, 20, size=(b, 2)).astype(np.float32)
    inst = None
    label = int(rng.integers(0, 2))
    if with_labels:
        inst = np.zeros(b, dtype=np.uint8)
        if label:
            inst[rng.choice(b, size=int(rng.integers(1, b + 1)), replace=False)] = 1
    return BagRecord(bag_id, label, feats, coords, inst)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = SyntheticConfig(
        num_bags={"train": 6, "val": 4, "test": 4},
        bag_size_range=(20, 40),
        feature_dim=8,
        witness_rate=0.2,
        separation=3.0,
        spatial_radius=3.0,
        master_seed=5,
    )
    manifest = generate_synthetic_dataset(cfg, out)
    return manifest


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
