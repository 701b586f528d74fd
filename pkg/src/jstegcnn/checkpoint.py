"""Single-file checkpoints.

Layout: ``b"JCK1" | version u32 | arch sha256 (64 ascii) | meta length u32 |
meta JSON | npz payload``.  The JSON holds the iteration counter, config
hash, ArchSpec text and any trainer state (RNG, sampler); the npz holds
parameter values, momentum buffers and BN running statistics.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import ArchSpec
from .network import Network

CKPT_MAGIC = b"JCK1"
CKPT_VERSION = 1
_HEAD = struct.Struct("<4sI64sI")


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    iteration: int
    arch_text: str
    arrays: dict[str, np.ndarray]
    config_hash: str = ""
    trainer_state: dict = field(default_factory=dict)

    @property
    def arch_hash(self) -> str:
        return ArchSpec.from_text(self.arch_text).hash()

    def spec(self) -> ArchSpec:
        return ArchSpec.from_text(self.arch_text)


def snapshot(net: Network, iteration: int, config_hash: str = "", trainer_state=None) -> Checkpoint:
    arrays = {k: v.copy() for k, v in net.state_arrays().items()}
    for i, p in enumerate(net.parameters()):
        arrays[f"param{i}.momentum"] = p.momentum_buf.copy()
    return Checkpoint(iteration, net.spec.to_text(), arrays, config_hash, dict(trainer_state or {}))


def restore(net: Network, ckpt: Checkpoint, with_momentum: bool = True) -> Network:
    if ckpt.arch_hash != net.spec.hash():
        raise CheckpointError(
            f"checkpoint architecture {ckpt.spec().name} ({ckpt.arch_hash[:12]}) does not match "
            f"network {net.spec.name} ({net.spec.hash()[:12]})"
        )
    for name, arr in net.state_arrays().items():
        arr[...] = ckpt.arrays[name]
    for i, p in enumerate(net.parameters()):
        if with_momentum:
            p.momentum_buf[...] = ckpt.arrays[f"param{i}.momentum"]
        else:
            p.momentum_buf[...] = 0
        p.grad[...] = 0
    return net


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically: a failed write leaves any previous file untouched."""
    path = Path(path)
    meta = json.dumps({
        "iteration": ckpt.iteration,
        "config_hash": ckpt.config_hash,
        "arch_text": ckpt.arch_text,
        "trainer_state": ckpt.trainer_state,
    }).encode()
    buf = io.BytesIO()
    np.savez(buf, **ckpt.arrays)
    head = _HEAD.pack(CKPT_MAGIC, CKPT_VERSION, ckpt.arch_hash.encode(), len(meta))
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(head)
            f.write(meta)
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        if tmp.is_file():
            tmp.unlink()
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, arch_hash, mlen = _HEAD.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(data[_HEAD.size:_HEAD.size + mlen])
    with np.load(io.BytesIO(data[_HEAD.size + mlen:])) as z:
        arrays = {k: z[k] for k in z.files}
    ckpt = Checkpoint(meta["iteration"], meta["arch_text"], arrays,
                      meta.get("config_hash", ""), meta.get("trainer_state", {}))
    if ckpt.arch_hash != arch_hash.decode():
        raise CheckpointError(f"{path}: header architecture hash does not match stored ArchSpec")
    return ckpt


def network_from_checkpoint(path_or_ckpt, dtype=np.float32) -> Network:
    ckpt = path_or_ckpt if isinstance(path_or_ckpt, Checkpoint) else load_checkpoint(path_or_ckpt)
    net = Network(ckpt.spec(), dtype=dtype)
    return restore(net, ckpt)


class CheckpointStore:
    """Directory of ``ck<iteration>.ckpt`` files."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, iteration: int) -> Path:
        return self.directory / f"ck{iteration}.ckpt"

    def iterations(self) -> list[int]:
        its = []
        for p in self.directory.glob("ck*.ckpt"):
            stem = p.stem[2:]
            if stem.isdigit():
                its.append(int(stem))
        return sorted(its)

    def save(self, ckpt: Checkpoint) -> Path:
        return save_checkpoint(self.path(ckpt.iteration), ckpt)

    def load(self, iteration: int) -> Checkpoint:
        return load_checkpoint(self.path(iteration))

    def resolve(self, name: str) -> Path:
        """``ck80000`` / ``80000`` / a path -> checkpoint file."""
        p = Path(name)
        if p.suffix == ".ckpt" and p.exists():
            return p
        stem = name[2:] if name.startswith("ck") else name
        if stem.isdigit():
            return self.path(int(stem))
        cand = self.directory / name
        return cand if cand.suffix else cand.with_suffix(".ckpt")
