"""Single-file checkpoint container.

Layout::

    b"VCSECKPT"                      8-byte magic
    u64 little-endian                header length in bytes
    header                           UTF-8 JSON
    tensor payload                   raw little-endian bytes, concatenated

The header records variant, stage and epoch, and for every parameter group a
manifest of tensor names, dtypes, shapes and byte offsets plus a SHA-256
content hash of that group's tensors. Groups can be compared by hash without
loading tensors.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

MAGIC = b"VCSECKPT"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(RuntimeError):
    pass


def _tensor_bytes(t: torch.Tensor) -> tuple[str, bytes]:
    t = t.detach().cpu().contiguous()
    if t.dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {t.dtype}")
    code = _DTYPES[t.dtype]
    return code, t.numpy().astype(code, copy=False).tobytes()


def group_digest(module: nn.Module) -> str:
    """SHA-256 over a module's state (names, dtypes, shapes, bytes) in name order."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        code, raw = _tensor_bytes(t)
        h.update(f"{name}|{code}|{tuple(t.shape)}|".encode())
        h.update(raw)
    return h.hexdigest()


def save_checkpoint(path: str | Path, groups: dict[str, nn.Module], *, variant: str, stage: int, epoch: int,
                    extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    manifest: dict[str, Any] = {}
    chunks: list[bytes] = []
    offset = 0
    for gname in sorted(groups):
        entries = []
        for name, t in sorted(groups[gname].state_dict().items()):
            code, raw = _tensor_bytes(t)
            entries.append({"name": name, "dtype": code, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        manifest[gname] = {"sha256": group_digest(groups[gname]), "tensors": entries}
    header = {
        "format": "vcse-checkpoint",
        "version": FORMAT_VERSION,
        "variant": variant,
        "stage": stage,
        "epoch": epoch,
        "groups": manifest,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)
    return path


def read_header(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
    header["_payload_offset"] = len(MAGIC) + 8 + n
    return header


def group_hashes(path: str | Path) -> dict[str, str]:
    return {g: info["sha256"] for g, info in read_header(path)["groups"].items()}


def group_bytes(path: str | Path, group: str) -> bytes:
    """Raw payload bytes of one group, for byte-level comparison across checkpoints."""
    header = read_header(path)
    entries = header["groups"][group]["tensors"]
    base = header["_payload_offset"]
    with open(path, "rb") as fh:
        out = []
        for e in entries:
            fh.seek(base + e["offset"])
            out.append(fh.read(e["nbytes"]))
    return b"".join(out)


def load_checkpoint(path: str | Path, groups: dict[str, nn.Module], *, only: set[str] | None = None,
                    expect_variant: str | None = None) -> dict[str, Any]:
    """Load tensors into ``groups`` (all stored groups present in both, or ``only``); return the header."""
    header = read_header(path)
    if expect_variant is not None and header["variant"] != expect_variant:
        raise CheckpointError(f"{path}: checkpoint is for variant {header['variant']!r}, not {expect_variant!r}")
    base = header["_payload_offset"]
    data = Path(path).read_bytes()
    for gname, info in header["groups"].items():
        if gname not in groups or (only is not None and gname not in only):
            continue
        state = {}
        for e in info["tensors"]:
            start = base + e["offset"]
            arr = np.frombuffer(data, dtype=e["dtype"], count=int(np.prod(e["shape"], dtype=np.int64)),
                                offset=start).reshape(e["shape"])
            state[e["name"]] = torch.from_numpy(arr.copy()).to(_TORCH_DTYPES[e["dtype"]])
        groups[gname].load_state_dict(state)
        if group_digest(groups[gname]) != info["sha256"]:
            raise CheckpointError(f"{path}: content hash mismatch for group {gname}")
    return header
