"""Binary model files.

Layout (all integers little-endian):

    magic  b"SIRN"
    u32    format version
    u64    config block length
    bytes  config block: UTF-8 lines "key=<json>\\n", sorted by key
    u32    tensor count
    per tensor:
        u32      name length, then name bytes (UTF-8)
        u32      ndim, then u64 per dimension
        float64  values, row-major

The config block carries the hyperparameters, the vocabulary (ordered by
id), and the mapping-state scalars; the mapping arrays ride along as named
tensors. Save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .encoders import Vocab
from .errors import FormatError
from .model import ModelConfig, ModelState
from .similarity import MappingState

MAGIC = b"SIRN"
FORMAT_VERSION = 1

_MAPPING_TENSORS = ("mapping.mean", "mapping.cov", "mapping.matrix")


def _config_block(state: ModelState) -> bytes:
    entries: dict[str, object] = {}
    for f in dataclasses.fields(ModelConfig):
        value = getattr(state.config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        entries[f"config.{f.name}"] = value
    entries["vocab.tokens"] = state.vocab.ordered_tokens()
    entries["mapping.momentum"] = state.mapping.momentum
    entries["mapping.eps"] = state.mapping.eps
    entries["mapping.dim"] = state.mapping.dim
    entries["mapping.fit_count"] = state.mapping.fit_count
    entries["mapping.frozen"] = state.mapping.frozen
    lines = [f"{key}={json.dumps(entries[key], sort_keys=True)}\n" for key in sorted(entries)]
    return "".join(lines).encode("utf-8")


def _parse_config_block(blob: bytes, path) -> dict[str, object]:
    entries: dict[str, object] = {}
    for lineno, line in enumerate(blob.decode("utf-8").splitlines(), start=1):
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise FormatError(f"{path}: config line {lineno} has no '='")
        try:
            entries[key] = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: config line {lineno}: {exc}") from exc
    return entries


def _write_tensor(out, name: str, arr: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    out.write(struct.pack("<I", len(name_b)))
    out.write(name_b)
    out.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        out.write(struct.pack("<Q", d))
    out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_model(state: ModelState, path) -> None:
    config = _config_block(state)
    tensors = list(state.params.items()) + [
        ("mapping.mean", state.mapping.mean),
        ("mapping.cov", state.mapping.cov),
        ("mapping.matrix", state.mapping.matrix),
    ]
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        out.write(struct.pack("<Q", len(config)))
        out.write(config)
        out.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(out, name, np.asarray(arr, dtype=np.float64))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated file")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_model(path) -> ModelState:
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic/version: not a model file")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: bad magic/version: format version {version} unsupported")
    entries = _parse_config_block(r.take(r.u64()), path)

    config_kwargs = {}
    for f in dataclasses.fields(ModelConfig):
        key = f"config.{f.name}"
        if key not in entries:
            raise FormatError(f"{path}: missing config key {key}")
        value = entries.pop(key)
        if isinstance(value, list):
            value = tuple(value)
        config_kwargs[f.name] = value
    config = ModelConfig(**config_kwargs)

    tokens = entries.pop("vocab.tokens", None)
    if not isinstance(tokens, list):
        raise FormatError(f"{path}: missing vocab.tokens")
    vocab = Vocab.from_tokens_in_order(tokens)

    try:
        mapping_scalars = {
            "momentum": float(entries.pop("mapping.momentum")),
            "eps": float(entries.pop("mapping.eps")),
            "dim": int(entries.pop("mapping.dim")),
            "fit_count": int(entries.pop("mapping.fit_count")),
            "frozen": bool(entries.pop("mapping.frozen")),
        }
    except KeyError as exc:
        raise FormatError(f"{path}: missing mapping key {exc}") from exc
    if entries:
        raise FormatError(f"{path}: unknown config keys {sorted(entries)}")

    n_tensors = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u64() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(count * 8), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = data
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes")

    for name in _MAPPING_TENSORS:
        if name not in tensors:
            raise FormatError(f"{path}: missing tensor {name}")
    mapping = MappingState(
        dim=mapping_scalars["dim"],
        momentum=mapping_scalars["momentum"],
        eps=mapping_scalars["eps"],
        mean=tensors.pop("mapping.mean"),
        cov=tensors.pop("mapping.cov"),
        matrix=tensors.pop("mapping.matrix"),
        fit_count=mapping_scalars["fit_count"],
        frozen=mapping_scalars["frozen"],
    )
    return ModelState(config=config, vocab=vocab, params=tensors, mapping=mapping, version=version)
