"""Versioned binary checkpoint format.

Layout, all integers little-endian:

    magic            4 bytes  b"DSM1"
    version          uint32
    config block     uint64 length prefix, then UTF-8 "key = value" lines
    tensor count     uint32
    per tensor, in declaration order:
        name         uint32 length prefix, then UTF-8 bytes
        ndim         uint32
        dims         uint64 each
        data         float64 little-endian, C order

The config block captures the full predictor config plus optimizer scalars,
so a loaded checkpoint is self-describing. Optimizer moment tensors are
stored after the parameters using the same record format with "opt.m." /
"opt.v." name prefixes.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .optim import OptimizerState
from .predictor import PredictorConfig, PredictorParams, param_shapes

MAGIC = b"DSM1"
VERSION = 1

_BOOL_KEYS = {"self_attention", "use_positions"}
_FLOAT_KEYS = {"base_lr", "weight_decay", "beta1", "beta2", "eps"}


def _config_lines(cfg: PredictorConfig, opt: OptimizerState) -> str:
    items = dict(cfg.to_dict())
    items.update(
        {
            "opt.base_lr": opt.base_lr,
            "opt.weight_decay": opt.weight_decay,
            "opt.beta1": opt.beta1,
            "opt.beta2": opt.beta2,
            "opt.eps": opt.eps,
            "opt.step": opt.step,
        }
    )
    return "".join(f"{k} = {items[k]!r}\n" for k in sorted(items))


def _parse_config(text: str) -> tuple[PredictorConfig, dict]:
    cfg_kv: dict = {}
    opt_kv: dict = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, raw = line.partition(" = ")
        try:
            value = eval(raw, {"__builtins__": {}}, {})  # reprs of int/float/bool only
        except Exception as exc:
            raise CheckpointError(f"bad config line {line!r}") from exc
        if key.startswith("opt."):
            opt_kv[key[4:]] = value
        else:
            cfg_kv[key] = value
    try:
        cfg = PredictorConfig.from_dict(cfg_kv)
    except TypeError as exc:
        raise CheckpointError(f"unreadable config block: {exc}") from exc
    return cfg, opt_kv


def _write_tensor(buf: io.BufferedWriter, name: str, tensor: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", tensor.ndim))
    for dim in tensor.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def _read_tensor(buf: io.BufferedReader) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(buf, 4))
    name = _read_exact(buf, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(buf, 8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(buf, count * 8), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def _read_exact(buf, size: int) -> bytes:
    data = buf.read(size)
    if len(data) != size:
        raise CheckpointError("truncated checkpoint file")
    return data


def save_checkpoint(
    params: PredictorParams, opt: OptimizerState, path: str | Path
) -> None:
    """Write parameters, optimizer state, and config to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records: list[tuple[str, np.ndarray]] = list(params.tensors.items())
    records += [("opt.m." + k, v) for k, v in opt.m.items()]
    records += [("opt.v." + k, v) for k, v in opt.v.items()]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        block = _config_lines(params.cfg, opt).encode("utf-8")
        fh.write(struct.pack("<Q", len(block)))
        fh.write(block)
        fh.write(struct.pack("<I", len(records)))
        for name, tensor in records:
            _write_tensor(fh, name, tensor)


def load_checkpoint(path: str | Path) -> tuple[PredictorParams, OptimizerState]:
    """Read a checkpoint back; shapes are validated against its config."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (block_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        cfg, opt_kv = _parse_config(_read_exact(fh, block_len).decode("utf-8"))
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            name, tensor = _read_tensor(fh)
            tensors[name] = tensor

    expected = param_shapes(cfg)
    params = PredictorParams(cfg=cfg, tensors={})
    for name, shape in expected:
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name}")
        if tensors[name].shape != shape:
            raise CheckpointError(
                f"tensor {name} has shape {tensors[name].shape}, config implies {shape}"
            )
        params.tensors[name] = tensors[name]

    opt = OptimizerState(
        base_lr=float(opt_kv.get("base_lr", 0.0002)),
        weight_decay=float(opt_kv.get("weight_decay", 0.01)),
        beta1=float(opt_kv.get("beta1", 0.9)),
        beta2=float(opt_kv.get("beta2", 0.999)),
        eps=float(opt_kv.get("eps", 1e-8)),
        step=int(opt_kv.get("step", 0)),
    )
    for name, shape in expected:
        m_name, v_name = "opt.m." + name, "opt.v." + name
        if m_name not in tensors or v_name not in tensors:
            raise CheckpointError(f"missing optimizer moments for {name}")
        opt.m[name] = tensors[m_name]
        opt.v[name] = tensors[v_name]
    return params, opt


def checkpoint_byte_length(cfg: PredictorConfig, opt: OptimizerState) -> int:
    """Exact on-disk size implied by the format; used to verify writes."""
    block = _config_lines(cfg, opt).encode("utf-8")
    total = 4 + 4 + 8 + len(block) + 4
    for name, shape in param_shapes(cfg):
        count = 1
        for dim in shape:
            count *= dim
        for full in (name, "opt.m." + name, "opt.v." + name):
            total += 4 + len(full.encode("utf-8")) + 4 + 8 * len(shape) + 8 * count
    return total
