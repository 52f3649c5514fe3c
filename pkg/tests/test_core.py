import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pamil.core import (
    HEADER_SIZE,
    BagFormatError,
    BagRecord,
    DatasetManifest,
    ManifestEntry,
    bag_label_from_instances,
    decode_bag,
    encode_bag,
    ingest_arrays,
    ingest_npz_dir,
    read_bag_file,
    read_bag_header,
    read_manifest,
    write_bag_file,
    write_manifest,
)

from conftest import random_bag
from oracles import BAG_BYTES_1x1_NO_LABELS, BAG_BYTES_1x1_WITH_LABELS, any_positive


@pytest.mark.parametrize("labels,expected", [([0, 0, 0, 0], 0), ([0, 0, 1, 0], 1), ([1, 1, 1], 1)])
def test_bag_label_examples(labels, expected):
    assert bag_label_from_instances(labels) == expected


def test_bag_label_empty():
    with pytest.raises(ValueError, match="empty bag"):
        bag_label_from_instances([])


def test_bag_label_rejects_non_binary():
    with pytest.raises(ValueError):
        bag_label_from_instances([0, 2])


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
def test_bag_label_matches_any(labels):
    assert bag_label_from_instances(labels) == any_positive(labels)


def test_record_invariants():
    f = np.zeros((3, 2))
    with pytest.raises(ValueError):
        BagRecord("a", 0, f, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        BagRecord("a", 2, f, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        BagRecord("a", 0, np.full((3, 2), np.nan), np.zeros((3, 2)))
    with pytest.raises(ValueError, match="disagrees"):
        BagRecord("a", 0, f, np.zeros((3, 2)), [0, 1, 0])
    with pytest.raises(ValueError):
        BagRecord("a", 0, np.zeros((0, 2)), np.zeros((0, 2)))


def test_round_trip_3x2(tmp_path):
    rec = BagRecord("b", 1, np.arange(6, dtype=np.float32).reshape(3, 2), [[0, 0], [0, 1], [1, 0]], [0, 1, 0])
    write_bag_file(rec, tmp_path / "b.pmlb")
    back = read_bag_file(tmp_path / "b.pmlb")
    assert back == rec
    assert back.features.tobytes() == rec.features.tobytes()
    assert read_bag_header(tmp_path / "b.pmlb") == (3, 2, 1)


def test_byte_length_1x1(tmp_path):
    with_labels = BagRecord("x", 0, [[0.5]], [[0, 0]], [0])
    without = BagRecord("x", 0, [[0.5]], [[0, 0]])
    assert HEADER_SIZE == 18
    assert len(encode_bag(with_labels)) == BAG_BYTES_1x1_WITH_LABELS
    assert len(encode_bag(without)) == BAG_BYTES_1x1_NO_LABELS


def test_layout_is_little_endian():
    rec = BagRecord("x", 1, [[0.5, -1.0]], [[3, 4]], [1])
    raw = encode_bag(rec)
    assert raw[:4] == b"PMLB"
    assert struct.unpack_from("<IIIBB", raw, 4) == (1, 1, 2, 1, 1)
    assert struct.unpack_from("<2f2f", raw, 18) == (0.5, -1.0, 3.0, 4.0)
    assert raw[-1] == 1


def test_wrong_magic(tmp_path):
    raw = bytearray(encode_bag(BagRecord("x", 0, [[1.0]], [[0, 0]])))
    raw[:4] = b"XXXX"
    (tmp_path / "x.pmlb").write_bytes(bytes(raw))
    with pytest.raises(BagFormatError, match="unrecognized bag file"):
        read_bag_file(tmp_path / "x.pmlb")


def test_wrong_version():
    raw = bytearray(encode_bag(BagRecord("x", 0, [[1.0]], [[0, 0]])))
    raw[4:8] = struct.pack("<I", 7)
    with pytest.raises(BagFormatError, match="unrecognized bag file"):
        decode_bag(bytes(raw), "x")


def test_truncated():
    raw = encode_bag(BagRecord("x", 0, np.ones((4, 3)), np.zeros((4, 2))))
    with pytest.raises(BagFormatError, match="corrupt bag file"):
        decode_bag(raw[:-3], "x")
    with pytest.raises(BagFormatError, match="corrupt bag file"):
        decode_bag(raw + b"\0", "x")


@settings(max_examples=120)
@given(
    st.integers(1, 40),
    st.integers(1, 6),
    st.booleans(),
    st.integers(0, 2**32 - 1),
)
def test_round_trip_property(b, d, with_labels, seed):
    rng = np.random.default_rng(seed)
    rec = random_bag(rng, b=b, d=d, with_labels=with_labels, grid=False)
    back = decode_bag(encode_bag(rec), rec.bag_id)
    assert back == rec
    assert back.coords.tobytes() == rec.coords.tobytes()


@given(arrays(np.float32, (5, 3), elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_round_trip_extreme_values(feats):
    rec = BagRecord("e", 0, feats, np.zeros((5, 2)))
    assert decode_bag(encode_bag(rec), "e") == rec


def test_manifest_round_trip(tmp_path, rng):
    entries = []
    for i, split in enumerate(["train", "val", "test"]):
        rec = random_bag(rng, bag_id=f"b{i}")
        write_bag_file(rec, tmp_path / "bags" / f"b{i}.pmlb")
        entries.append(ManifestEntry(f"b{i}", f"bags/b{i}.pmlb", rec.label, split))
    m = DatasetManifest(entries, root=tmp_path)
    write_manifest(m, tmp_path / "manifest.csv")
    assert (tmp_path / "manifest.csv").read_text().splitlines()[0] == "bag_id,path,label,split"
    back = read_manifest(tmp_path / "manifest.csv")
    assert back.entries == entries and back.num_bags == 3
    assert [b.bag_id for b in back.load_split("val")] == ["b1"]


def test_manifest_invariants(tmp_path):
    e = ManifestEntry("a", "a.pmlb", 0, "train")
    with pytest.raises(ValueError, match="duplicate"):
        DatasetManifest([e, e])
    with pytest.raises(ValueError, match="split"):
        DatasetManifest([ManifestEntry("a", "a.pmlb", 0, "dev")])
    with pytest.raises(FileNotFoundError):
        DatasetManifest([e], root=tmp_path).load(e)
    (tmp_path / "m.csv").write_text("id,path\n")
    with pytest.raises(ValueError, match="header"):
        read_manifest(tmp_path / "m.csv")


def test_manifest_label_mismatch(tmp_path):
    write_bag_file(BagRecord("a", 1, [[1.0]], [[0, 0]]), tmp_path / "a.pmlb")
    m = DatasetManifest([ManifestEntry("a", "a.pmlb", 0, "train")], root=tmp_path)
    with pytest.raises(ValueError, match="disagrees"):
        m.load_split("train")


def test_ingest_npz(tmp_path, rng):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        np.savez(src / f"s{i}.npz", features=rng.standard_normal((5, 4)), coords=np.zeros((5, 2)), label=i % 2)
    m = ingest_npz_dir(src, tmp_path / "out", split_of=lambda stem: "test" if stem == "s2" else "train")
    assert [e.split for e in m.entries] == ["train", "train", "test"]
    again = read_manifest(tmp_path / "out" / "manifest.csv")
    assert again.load(again.entries[1]).label == 1


def test_ingest_arrays_keeps_float32(tmp_path):
    feats = np.array([[1.25, 2.5]], dtype=np.float64)
    m = ingest_arrays([("z", feats, np.zeros((1, 2)), 1, "train")], tmp_path)
    rec = m.load(m.entries[0])
    assert rec.features.dtype == np.float32 and rec.instance_labels is None
    assert np.array_equal(rec.features, feats.astype(np.float32))


def test_atomic_write_leaves_no_temp(tmp_path):
    write_bag_file(BagRecord("a", 0, [[1.0]], [[0, 0]]), tmp_path / "a.pmlb")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.pmlb"]
