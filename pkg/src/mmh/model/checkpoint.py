"""Single-file checkpoints: named tensors plus a JSON trailer.

Layout (little-endian)::

    b"MMHCKPT\\0"  u32 version  u32 n_tensors
    n_tensors x { u16 name_len, name (utf-8), u8 dtype, u8 ndim,
                  ndim x u32 shape, u64 nbytes, payload }
    u32 trailer_len, trailer (utf-8 JSON: step, spec, vocab_hash, ...)
    b"MMHCKEND"

Tensors are stored as ``param/<name>``, ``optim/<name>/<slot>`` and
``rng/dropout``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import InputError, MMHError
from .network import ModelSpec, MultimodalSeq2Seq
from .training import OptimizerConfig, make_optimizer

MAGIC = b"MMHCKPT\0"
END = b"MMHCKEND"
VERSION = 1
DTYPES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.uint8, 4: np.bool_}
DTYPE_CODES = {np.dtype(v): k for k, v in DTYPES.items()}


class CheckpointError(MMHError):
    pass


class IncompatibleSpec(InputError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.meta["spec"])

    @property
    def vocab_hash(self) -> str | None:
        return self.meta.get("vocab_hash")


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        code = DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw_name = name.encode("utf-8")
        payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<Q", len(payload)) + payload)
    trailer = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(trailer)) + trailer + END)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


def read_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if data[-8:] != END:
        raise CheckpointError(f"{path}: truncated checkpoint")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            name = data[off + 2:off + 2 + n].decode("utf-8")
            off += 2 + n
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            (nbytes,) = struct.unpack_from("<Q", data, off)
            off += 8
            dtype = np.dtype(DTYPES[code]).newbyteorder("<")
            arr = np.frombuffer(data[off:off + nbytes], dtype=dtype).reshape(shape)
            tensors[name] = arr.astype(DTYPES[code])
            off += nbytes
        (tlen,) = struct.unpack_from("<I", data, off)
        meta = json.loads(data[off + 4:off + 4 + tlen].decode("utf-8"))
    except (struct.error, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    return Checkpoint(tensors, meta)


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def save_checkpoint(path, model: MultimodalSeq2Seq, optimizer: torch.optim.Optimizer | None,
                    step: int, vocab_hash: str | None = None, extra: dict | None = None) -> None:
    tensors = {f"param/{n}": _to_numpy(p) for n, p in model.named_parameters()}
    meta = {
        "format_version": VERSION,
        "step": int(step),
        "spec": model.spec.to_dict(),
        "vocab_hash": vocab_hash,
        "trainable": [n for n, p in model.named_parameters() if p.requires_grad],
        "extra": extra or {},
    }
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        group = optimizer.param_groups[0]
        meta["optimizer"] = {"lr": group["lr"], "betas": list(group["betas"]), "eps": group["eps"]}
        for p, state in optimizer.state.items():
            for slot, value in state.items():
                tensors[f"optim/{names[id(p)]}/{slot}"] = _to_numpy(torch.as_tensor(value))
    tensors["rng/dropout"] = model.rng.get_state().numpy().copy()
    write_checkpoint(path, tensors, meta)


def load_checkpoint(path, spec: ModelSpec | None = None, vocab_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint, refusing one built for a different spec or vocabulary."""
    ckpt = read_checkpoint(path)
    if spec is not None and ckpt.spec != spec:
        raise IncompatibleSpec(f"{path}: checkpoint spec {ckpt.spec} differs from {spec}")
    if vocab_hash is not None and ckpt.vocab_hash != vocab_hash:
        raise IncompatibleSpec(
            f"{path}: checkpoint vocabulary hash {ckpt.vocab_hash} does not match {vocab_hash}"
        )
    return ckpt


def restore_model(ckpt: Checkpoint, dtype=torch.float32) -> MultimodalSeq2Seq:
    model = MultimodalSeq2Seq(ckpt.spec)
    state = {n[len("param/"):]: torch.from_numpy(a.copy()) for n, a in ckpt.tensors.items()
             if n.startswith("param/")}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise IncompatibleSpec(f"checkpoint tensors do not match the model: missing={missing} unexpected={unexpected}")
    trainable = set(ckpt.meta.get("trainable", [n for n, _ in model.named_parameters()]))
    for n, p in model.named_parameters():
        p.requires_grad_(n in trainable)
    if "rng/dropout" in ckpt.tensors:
        model.rng.set_state(torch.from_numpy(ckpt.tensors["rng/dropout"].copy()))
    return model.to(dtype)


def restore_optimizer(model: MultimodalSeq2Seq, ckpt: Checkpoint,
                      config: OptimizerConfig) -> torch.optim.Adam:
    optimizer = make_optimizer(model, config)
    for n, p in model.named_parameters():
        prefix = f"optim/{n}/"
        slots = {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)}
        if not slots or not p.requires_grad:
            continue
        optimizer.state[p] = {
            slot: torch.from_numpy(v.copy()).to(p.dtype if slot != "step" else torch.float32)
            for slot, v in slots.items()
        }
    return optimizer
