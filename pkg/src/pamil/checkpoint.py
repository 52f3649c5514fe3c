"""Versioned checkpoint container.

Layout (little-endian): magic ``PMCK``, version u32, header length u32,
UTF-8 JSON header, payload length u64, ``torch.save`` payload of named
tensors / optimizer states, then a CRC32 over everything before it.
"""

from __future__ import annotations

import io
import json
import logging
import struct
import warnings
import zlib
from pathlib import Path
from typing import Optional

import torch

from .core import atomic_write_bytes

log = logging.getLogger(__name__)

MAGIC = b"PMCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def checkpoint_save(state: dict, path) -> None:
    """``state`` holds JSON-able metadata plus ``tensors``: a nested dict of state dicts."""
    meta = {k: v for k, v in state.items() if k != "tensors"}
    header = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    torch.save(state.get("tensors", {}), buf)
    payload = buf.getvalue()
    body = b"".join(
        [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<Q", len(payload)), payload]
    )
    atomic_write_bytes(path, body + struct.pack("<I", zlib.crc32(body)))


def checkpoint_load(path, expected_config_hash: Optional[str] = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version")
    try:
        off = 12 + hlen
        (plen,) = struct.unpack_from("<Q", data, off)
        off += 8
        end = off + plen
        (crc,) = struct.unpack_from("<I", data, end)
    except struct.error as exc:
        raise CheckpointError("corrupt checkpoint: truncated") from exc
    if end + 4 != len(data) or zlib.crc32(data[:end]) != crc:
        raise CheckpointError("corrupt checkpoint: checksum mismatch")
    state = json.loads(data[12 : 12 + hlen].decode())
    state["tensors"] = torch.load(io.BytesIO(data[off:end]), weights_only=True)
    if expected_config_hash is not None and state.get("config_hash") != expected_config_hash:
        msg = f"checkpoint config hash {state.get('config_hash')} differs from {expected_config_hash}"
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
    return state
