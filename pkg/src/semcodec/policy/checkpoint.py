"""Binary checkpoint container for a (frame agent, CTU agent) pair.

Layout (little endian)::

    b"SMCK" | u16 version | u32 meta_len | meta (UTF-8 JSON, sorted keys) | tensor data

Tensor data is every tensor of the frame net then the CTU net, each in
sorted-name order, stored as raw float64.  Shapes, group tags and the
architecture hash live in the JSON metadata.  Writing the same nets twice
gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .net import ArchConfig, PolicyError, PolicyNet, ctu_arch, frame_arch

MAGIC = b"SMCK"
VERSION = 1
_HEAD = struct.Struct("<4sHI")
AGENTS = ("frame", "ctu")


class CheckpointError(PolicyError):
    pass


@dataclass
class Checkpoint:
    frame: PolicyNet
    ctu: PolicyNet
    meta: dict = field(default_factory=dict)

    def nets(self) -> dict[str, PolicyNet]:
        return {"frame": self.frame, "ctu": self.ctu}

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.frame.copy(), self.ctu.copy(), json.loads(json.dumps(self.meta)))

    def to_bytes(self) -> bytes:
        agents = {}
        chunks = []
        for key, net in self.nets().items():
            names = sorted(net.params)
            agents[key] = {
                "arch": net.arch.to_dict(),
                "arch_hash": net.arch.hash(),
                "seed": int(net.seed),
                "adapters": list(net.adapters),
                "tensors": [[n, list(net.params[n].shape), net.group_of(n)] for n in names],
            }
            chunks += [np.ascontiguousarray(net.params[n], dtype="<f8").tobytes() for n in names]
        meta = json.dumps({"agents": agents, "meta": self.meta}, sort_keys=True, separators=(",", ":")).encode()
        return _HEAD.pack(MAGIC, VERSION, len(meta)) + meta + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, expect: dict[str, ArchConfig] | None = None) -> "Checkpoint":
        if len(data) < _HEAD.size:
            raise CheckpointError("checkpoint truncated in header")
        magic, version, mlen = _HEAD.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            doc = json.loads(data[_HEAD.size : _HEAD.size + mlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt metadata: {e}") from None
        pos = _HEAD.size + mlen
        nets = {}
        for key in AGENTS:
            try:
                info = doc["agents"][key]
                arch = ArchConfig.from_dict(info["arch"])
            except (KeyError, TypeError, ValueError) as e:
                raise CheckpointError(f"corrupt metadata for {key} agent: {e!r}") from None
            if arch.hash() != info["arch_hash"]:
                raise CheckpointError(f"{key} agent: architecture hash mismatch")
            if expect is not None and key in expect and expect[key].hash() != arch.hash():
                raise CheckpointError(
                    f"{key} agent: architecture hash {arch.hash()} does not match expected {expect[key].hash()}"
                )
            params = {}
            for name, shape, _ in info["tensors"]:
                n = int(np.prod(shape, dtype=np.int64)) * 8
                if pos + n > len(data):
                    raise CheckpointError(f"checkpoint truncated in tensor {key}/{name}")
                params[name] = np.frombuffer(data, dtype="<f8", count=n // 8, offset=pos).reshape(shape).astype(np.float64)
                pos += n
            net = PolicyNet(arch, info["seed"], params=params)
            nets[key] = net
        if pos != len(data):
            raise CheckpointError(f"{len(data) - pos} trailing bytes after tensor data")
        return cls(nets["frame"], nets["ctu"], doc.get("meta", {}))

    def save(self, path: str | Path) -> str:
        """Write to ``path`` and return the sha256 of the bytes."""
        blob = self.to_bytes()
        Path(path).write_bytes(blob)
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def load(cls, path: str | Path, expect: dict[str, ArchConfig] | None = None) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise CheckpointError(f"checkpoint {p} not found")
        return cls.from_bytes(p.read_bytes(), expect)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def fresh(seed: int = 0) -> Checkpoint:
    """Untrained frame and CTU agents derived from one seed."""
    return Checkpoint(PolicyNet(frame_arch(), seed), PolicyNet(ctu_arch(), seed + 1), {"seed": seed})


def tensor_hashes(net: PolicyNet) -> dict[str, str]:
    return {k: hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest() for k, v in sorted(net.params.items())}
