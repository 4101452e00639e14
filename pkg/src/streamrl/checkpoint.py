"""Binary checkpoint files: a versioned header plus named float64 sections.

Layout: 8-byte magic, little-endian uint64 header length, JSON header, then
the raw float64 bytes of each section in header order. The model's parameter
vector lives in the "params" section; plugins may add their own sections
(e.g. "ewc/...", "replay/..."). Save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Mlp

MAGIC = b"SRLCKPT1"


class CheckpointError(ValueError):
    """Malformed checkpoint file or architecture mismatch."""


def save_checkpoint(path, arch: dict, sections: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, array in sections.items():
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"version": 1, "arch": arch, "sections": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    if header.get("version") != 1:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    sections = {}
    offset = 16 + header_len
    for entry in header["sections"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"section {entry['name']!r} truncated")
        sections[entry["name"]] = np.frombuffer(
            raw, dtype=np.float64, count=count, offset=offset
        ).reshape(entry["shape"]).copy()
        offset += nbytes
    return header["arch"], sections


def save_model(path, model: Mlp, extra_sections: dict[str, np.ndarray] | None = None) -> None:
    sections = {"params": model.flatten()}
    if extra_sections:
        sections.update(extra_sections)
    save_checkpoint(path, model.arch(), sections)


def load_model(path) -> tuple[Mlp, dict[str, np.ndarray]]:
    arch, sections = load_checkpoint(path)
    model = Mlp.from_arch(arch)
    params = sections.pop("params")
    if params.size != model.param_count:
        raise CheckpointError(
            f"checkpoint has {params.size} parameters, architecture needs {model.param_count}"
        )
    model.unflatten(params)
    return model, sections


def restore_into(model: Mlp, path) -> dict[str, np.ndarray]:
    """Load a checkpoint into an existing model, enforcing matching shape."""
    arch, sections = load_checkpoint(path)
    if arch != model.arch():
        raise CheckpointError(
            f"checkpoint architecture {arch} does not match model {model.arch()}"
        )
    model.unflatten(sections.pop("params"))
    return sections
