"""Single-file checkpoints: one JSON header line, then raw float32 payload.

The header records the config, step, rng counters, and a parameter index
of (name, shape, byte offset) into the little-endian float32 payload that
follows the newline.  Reloading restores forward outputs bit-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Parameter

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

FORMAT = "clearwav-ckpt-v1"


@dataclass
class Checkpoint:
    header: dict
    arrays: dict[str, np.ndarray]

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def step(self) -> int:
        return int(self.header["step"])

    @property
    def config(self) -> dict:
        return self.header["config"]

    def restore_into(self, params: list[Parameter]) -> None:
        for p in params:
            if p.name not in self.arrays:
                raise KeyError(f"checkpoint is missing parameter {p.name!r}")
            arr = self.arrays[p.name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)
            p.zero_grad()


def save_checkpoint(path, kind: str, config: dict, step: int,
                    rng_states: dict, params: list[Parameter],
                    extra: dict | None = None) -> None:
    index = []
    offset = 0
    blobs = []
    for p in params:
        blob = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        index.append({"name": p.name, "shape": list(p.data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"format": FORMAT, "kind": kind, "config": config, "step": int(step),
              "rng": rng_states, "params": index, "payload_bytes": offset}
    if extra:
        header["extra"] = extra
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    header = json.loads(header_line)
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if len(payload) != header["payload_bytes"]:
        raise ValueError(f"{path}: payload truncated "
                         f"({len(payload)} vs {header['payload_bytes']} bytes)")
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape)
    return Checkpoint(header=header, arrays=arrays)
