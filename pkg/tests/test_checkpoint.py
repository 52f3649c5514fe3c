import struct
import warnings

import pytest
import torch

from pamil.checkpoint import CheckpointError, checkpoint_load, checkpoint_save


def sample_state():
    torch.manual_seed(0)
    net = torch.nn.Linear(3, 2)
    opt = torch.optim.Adamax(net.parameters())
    net(torch.randn(4, 3)).sum().backward()
    opt.step()
    return {
        "tensors": {"model": net.state_dict(), "optimizer": opt.state_dict()},
        "epoch": 3,
        "config_hash": "abc",
        "rng_state": {"state": {"state": 2**127 + 5, "inc": 7}},
    }, net


def test_round_trip_bitwise(tmp_path):
    state, net = sample_state()
    checkpoint_save(state, tmp_path / "c.bin")
    back = checkpoint_load(tmp_path / "c.bin")
    for k, v in net.state_dict().items():
        assert torch.equal(back["tensors"]["model"][k], v)
    exp_avg = state["tensors"]["optimizer"]["state"][0]["exp_avg"]
    assert torch.equal(back["tensors"]["optimizer"]["state"][0]["exp_avg"], exp_avg)
    assert back["epoch"] == 3 and back["rng_state"]["state"]["state"] == 2**127 + 5


def test_tampered_version(tmp_path):
    state, _ = sample_state()
    checkpoint_save(state, tmp_path / "c.bin")
    raw = bytearray((tmp_path / "c.bin").read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    (tmp_path / "c.bin").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="unsupported checkpoint version"):
        checkpoint_load(tmp_path / "c.bin")


def test_corrupt_and_missing(tmp_path):
    state, _ = sample_state()
    checkpoint_save(state, tmp_path / "c.bin")
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="corrupt"):
        checkpoint_load(tmp_path / "t.bin")
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    (tmp_path / "f.bin").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError, match="corrupt"):
        checkpoint_load(tmp_path / "f.bin")
    (tmp_path / "m.bin").write_bytes(b"nope" + raw[4:])
    with pytest.raises(CheckpointError, match="corrupt"):
        checkpoint_load(tmp_path / "m.bin")
    with pytest.raises(CheckpointError, match="not found"):
        checkpoint_load(tmp_path / "absent.bin")


def test_hash_mismatch_warns_but_loads(tmp_path):
    state, _ = sample_state()
    checkpoint_save(state, tmp_path / "c.bin")
    with pytest.warns(UserWarning, match="config hash"):
        back = checkpoint_load(tmp_path / "c.bin", expected_config_hash="zzz")
    assert back["epoch"] == 3
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        checkpoint_load(tmp_path / "c.bin", expected_config_hash="abc")
