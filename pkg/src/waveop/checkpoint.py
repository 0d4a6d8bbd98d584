"""Self-describing checkpoint container.

A checkpoint is a directory holding `manifest.txt` (UTF-8 text: the model
configuration, free-form metadata, and a tensor table of name, dtype, shape,
byte offset) plus `tensors.bin`, the concatenation of each tensor's raw
little-endian row-major bytes. Gate snapshots from the semantic-memory pool
are stored under `memory/<label>/<parameter>` names, so a checkpoint carries
everything needed to reactivate any previously learned task.
"""

import dataclasses
import os

import numpy as np

from .continual import SemanticMemory
from .errors import ConfigError
from .model import GatedWaveletOperator, ModelConfig

_TUPLE_FIELDS = {"grid", "bases", "gate_hidden", "gate_hidden_2d"}


def _cfg_to_lines(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _TUPLE_FIELDS:
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return lines


def _cfg_from_kv(kv):
    kwargs = {}
    for f in dataclasses.fields(ModelConfig):
        if f.name not in kv:
            continue
        raw = kv[f.name]
        if f.name in _TUPLE_FIELDS:
            kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x)
        elif f.name in ("dtype", "gate_mode"):
            kwargs[f.name] = raw
        else:
            kwargs[f.name] = int(raw)
    return ModelConfig(**kwargs)


def _dtype_name(arr):
    return str(arr.dtype)


def save_checkpoint(path, model, memory=None, meta=None):
    """Write manifest.txt and tensors.bin; deterministic byte layout."""
    os.makedirs(path, exist_ok=True)
    entries = [(name, p.data) for name, p in model.named_parameters()]
    if memory is not None:
        for label in sorted(memory.labels()):
            for name, arr in memory.get(label).items():
                entries.append((f"memory/{label}/{name}", arr))
    lines = ["format = waveop-checkpoint-v1", "[config]"]
    lines += _cfg_to_lines(model.cfg)
    lines.append("[meta]")
    for key in sorted(meta or {}):
        lines.append(f"{key} = {meta[key]}")
    lines.append("[tensors]")
    blobs = []
    offset = 0
    for name, arr in entries:
        contig = np.ascontiguousarray(arr)
        raw = contig.astype(contig.dtype.newbyteorder("<")).tobytes()
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name} = {_dtype_name(arr)} | {shape} | {offset}")
        blobs.append(raw)
        offset += len(raw)
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "tensors.bin"), "wb") as fh:
        for raw in blobs:
            fh.write(raw)


def _read_manifest(path):
    cfg_kv, meta, tensors = {}, {}, []
    section = None
    with open(os.path.join(path, "manifest.txt"), "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("["):
                section = line.strip("[]")
                continue
            if "=" not in line:
                raise ConfigError(f"manifest.txt line {ln}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if section == "config":
                cfg_kv[key] = val
            elif section == "meta":
                meta[key] = val
            elif section == "tensors":
                try:
                    dtype, shape, offset = (s.strip() for s in val.split("|"))
                except ValueError as exc:
                    raise ConfigError(f"manifest.txt line {ln}: bad tensor entry") from exc
                shp = () if shape == "scalar" else tuple(int(x) for x in shape.split(","))
                tensors.append((key, dtype, shp, int(offset)))
            elif key == "format" and val != "waveop-checkpoint-v1":
                raise ConfigError(f"unknown checkpoint format {val!r}")
    return cfg_kv, meta, tensors


def load_checkpoint(path):
    """Rebuild the model, memory pool, and metadata; files opened read-only."""
    cfg_kv, meta, tensors = _read_manifest(path)
    cfg = _cfg_from_kv(cfg_kv)
    with open(os.path.join(path, "tensors.bin"), "rb") as fh:
        blob = fh.read()
    arrays = {}
    for name, dtype, shape, offset in tensors:
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
        arrays[name] = arr.reshape(shape).astype(dtype)
    model = GatedWaveletOperator(cfg, seed=0)
    for name, p in model.named_parameters():
        if name not in arrays:
            raise ConfigError(f"checkpoint missing tensor {name!r}")
        if arrays[name].shape != p.data.shape:
            raise ConfigError(f"tensor {name!r} shape {arrays[name].shape} != "
                              f"model {p.data.shape}")
        p.data = arrays[name].copy()
    memory = SemanticMemory()
    snaps = {}
    for name, arr in arrays.items():
        if name.startswith("memory/"):
            _, label, pname = name.split("/", 2)
            snaps.setdefault(int(label), {})[pname] = arr
    for label in sorted(snaps):
        frozen = {}
        for pname, arr in snaps[label].items():
            a = arr.copy()
            a.setflags(write=False)
            frozen[pname] = a
        memory.store(label, frozen)
    return model, memory, meta
