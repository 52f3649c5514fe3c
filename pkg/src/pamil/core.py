"""Bag records, MIL label semantics, the binary bag container and the dataset manifest."""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

MAGIC = b"PMLB"
VERSION = 1
# magic, version, B, D, label, has_instance_labels
_HEADER = struct.Struct("<4sIIIBB")
HEADER_SIZE = _HEADER.size

SPLITS = ("train", "val", "test")


class BagFormatError(ValueError):
    pass


def bag_label_from_instances(instance_labels) -> int:
    """A bag is negative only when every instance is negative."""
    labels = np.asarray(instance_labels)
    if labels.size == 0:
        raise ValueError("empty bag")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("instance labels must be binary")
    return int(labels.sum() > 0)


@dataclass(eq=False)
class BagRecord:
    bag_id: str
    label: int
    features: np.ndarray
    coords: np.ndarray
    instance_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float32)
        if self.instance_labels is not None:
            self.instance_labels = np.ascontiguousarray(self.instance_labels, dtype=np.uint8)
        self.label = int(self.label)
        self.validate()

    @property
    def num_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"bag {self.bag_id}: features must be a non-empty B x D matrix")
        if self.coords.shape != (self.num_instances, 2):
            raise ValueError(f"bag {self.bag_id}: coords must be B x 2")
        if self.label not in (0, 1):
            raise ValueError(f"bag {self.bag_id}: label must be 0 or 1")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.coords))):
            raise ValueError(f"bag {self.bag_id}: non-finite values")
        if self.instance_labels is not None:
            if self.instance_labels.shape != (self.num_instances,):
                raise ValueError(f"bag {self.bag_id}: instance_labels must have length B")
            if bag_label_from_instances(self.instance_labels) != self.label:
                raise ValueError(f"bag {self.bag_id}: label disagrees with instance labels")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BagRecord):
            return NotImplemented
        if (self.instance_labels is None) != (other.instance_labels is None):
            return False
        same_inst = self.instance_labels is None or np.array_equal(
            self.instance_labels, other.instance_labels
        )
        return (
            self.bag_id == other.bag_id
            and self.label == other.label
            and self.features.tobytes() == other.features.tobytes()
            and self.features.shape == other.features.shape
            and self.coords.tobytes() == other.coords.tobytes()
            and same_inst
        )


def encode_bag(record: BagRecord) -> bytes:
    has_inst = record.instance_labels is not None
    parts = [
        _HEADER.pack(MAGIC, VERSION, record.num_instances, record.feature_dim, record.label, int(has_inst)),
        record.features.astype("<f4").tobytes(),
        record.coords.astype("<f4").tobytes(),
    ]
    if has_inst:
        parts.append(record.instance_labels.astype(np.uint8).tobytes())
    return b"".join(parts)


def decode_bag(data: bytes, bag_id: str) -> BagRecord:
    if len(data) < HEADER_SIZE:
        raise BagFormatError("unrecognized bag file")
    magic, version, b, d, label, has_inst = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION:
        raise BagFormatError("unrecognized bag file")
    expected = HEADER_SIZE + 4 * b * d + 8 * b + (b if has_inst else 0)
    if len(data) != expected or b < 1 or d < 1:
        raise BagFormatError("corrupt bag file")
    off = HEADER_SIZE
    feats = np.frombuffer(data, dtype="<f4", count=b * d, offset=off).reshape(b, d)
    off += 4 * b * d
    coords = np.frombuffer(data, dtype="<f4", count=2 * b, offset=off).reshape(b, 2)
    off += 8 * b
    inst = None
    if has_inst:
        inst = np.frombuffer(data, dtype=np.uint8, count=b, offset=off)
    return BagRecord(bag_id, label, feats.copy(), coords.copy(), None if inst is None else inst.copy())


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_bag_file(record: BagRecord, path) -> None:
    record.validate()
    atomic_write_bytes(path, encode_bag(record))


def read_bag_file(path, bag_id: Optional[str] = None) -> BagRecord:
    path = Path(path)
    return decode_bag(path.read_bytes(), bag_id if bag_id is not None else path.stem)


def read_bag_header(path) -> tuple[int, int, int]:
    """(num_instances, feature_dim, label) without reading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise BagFormatError("unrecognized bag file")
    magic, version, b, d, label, _ = _HEADER.unpack(head)
    if magic != MAGIC or version != VERSION:
        raise BagFormatError("unrecognized bag file")
    return b, d, label


@dataclass(frozen=True)
class ManifestEntry:
    bag_id: str
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.bag_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bag_id in manifest")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for bag {e.bag_id}")
            if e.label not in (0, 1):
                raise ValueError(f"bad label for bag {e.bag_id}")

    @property
    def num_bags(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def load(self, entry: ManifestEntry) -> BagRecord:
        path = self.resolve(entry)
        if not path.exists():
            raise FileNotFoundError(f"bag file not found: {path}")
        rec = read_bag_file(path, entry.bag_id)
        if rec.label != entry.label:
            raise ValueError(f"bag {entry.bag_id}: manifest label disagrees with bag file")
        return rec

    def load_split(self, name: str) -> list[BagRecord]:
        return [self.load(e) for e in self.split(name)]


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["bag_id,path,label,split"]
    lines += [f"{e.bag_id},{e.path},{e.label},{e.split}" for e in manifest.entries]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["bag_id", "path", "label", "split"]:
            raise ValueError(f"{path}: manifest header must be bag_id,path,label,split")
        entries = [
            ManifestEntry(row["bag_id"], row["path"], int(row["label"]), row["split"]) for row in reader
        ]
    return DatasetManifest(entries, root=path.parent)


def ingest_arrays(
    items: Iterable[tuple[str, np.ndarray, np.ndarray, int, str]], out_dir
) -> DatasetManifest:
    """Write precomputed (bag_id, features, coords, label, split) bags plus a manifest."""
    out_dir = Path(out_dir)
    entries = []
    for bag_id, feats, coords, label, split in items:
        rec = BagRecord(bag_id, label, feats, coords)
        rel = f"bags/{bag_id}.pmlb"
        write_bag_file(rec, out_dir / rel)
        entries.append(ManifestEntry(bag_id, rel, rec.label, split))
    manifest = DatasetManifest(entries, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest


def ingest_npz_dir(src_dir, out_dir, split_of=None) -> DatasetManifest:
    """Ingest ``*.npz`` files holding ``features``, ``coords`` and ``label`` (and optionally ``split``)."""
    items = []
    for p in sorted(Path(src_dir).glob("*.npz")):
        with np.load(p) as z:
            split = str(z["split"]) if "split" in z else (split_of(p.stem) if split_of else "train")
            items.append((p.stem, z["features"], z["coords"], int(z["label"]), split))
    return ingest_arrays(items, out_dir)
