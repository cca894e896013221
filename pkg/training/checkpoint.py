"""Binary checkpoint format.

Layout, all integers little-endian::

    b"VLBT"  u32 version  u32 tensor_count
    repeated tensor_count times:
        u16 name_length  name (UTF-8)  u8 rank  u64 dim * rank  f32 data (C order)

Names without a reserved prefix are backbone parameters. Reserved prefixes:
``cb/`` for the visual codebook (``cb/centroids``, ``cb/fingerprint`` as 32
digest bytes), ``opt/`` for Adam moments (``opt/m/<name>``, ``opt/v/<name>``)
and the update counter ``opt/step``, and ``heads/`` for finetuning heads.

Loading parses the whole file before anything is returned, so a malformed
file never yields a partial checkpoint.
"""

import os
import struct
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ContractError, FormatError
from tokenizer.codebook import Codebook

from .optim import AdamState

MAGIC = b"VLBT"
VERSION = 1

CODEBOOK_PREFIX = "cb/"
OPTIMIZER_PREFIX = "opt/"
HEADS_PREFIX = "heads/"

_HEADER = struct.Struct("<4sII")


class Checkpoint(BaseModel):
    """Everything a checkpoint file holds, split by name prefix."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: Dict[str, np.ndarray] = Field(default_factory=dict)
    heads: Dict[str, np.ndarray] = Field(default_factory=dict)
    codebook: Optional[Codebook] = None
    optimizer: Optional[AdamState] = None

    @property
    def step(self) -> int:
        return self.optimizer.step if self.optimizer is not None else 0


def encode_tensors(tensors: List[Tuple[str, np.ndarray]]) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, value in tensors:
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise ContractError(f"tensor name too long for the checkpoint format: {name[:40]}...")
        value = np.asarray(value)
        if value.ndim > 0xFF:
            raise ContractError(f"tensor '{name}' has rank {value.ndim}, above the format limit")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(np.array(value.shape, dtype="<u8").tobytes())
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_tensors(blob: bytes) -> List[Tuple[str, np.ndarray]]:
    """Parse every tensor; any inconsistency raises ``FormatError``."""
    if len(blob) < _HEADER.size:
        raise FormatError(f"checkpoint truncated: {len(blob)} bytes is shorter than the header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {VERSION}")

    offset = _HEADER.size
    tensors: List[Tuple[str, np.ndarray]] = []

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(f"checkpoint truncated while reading {what} of tensor #{len(tensors)}")
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"tensor #{len(tensors)} has a name that is not UTF-8") from e
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = tuple(int(d) for d in np.frombuffer(take(8 * rank, "dims"), dtype="<u8"))
        n_values = int(np.prod(dims, dtype=np.uint64)) if dims else 1
        data = np.frombuffer(take(4 * n_values, f"data of '{name}'"), dtype="<f4").reshape(dims)
        tensors.append((name, data.astype(np.float32)))

    if offset != len(blob):
        raise FormatError(f"checkpoint has {len(blob) - offset} trailing bytes after {count} tensors")
    return tensors


def save_checkpoint(
    path: Path,
    params: Mapping[str, np.ndarray],
    optimizer: Optional[AdamState] = None,
    codebook: Optional[Codebook] = None,
    heads: Optional[Mapping[str, np.ndarray]] = None,
) -> Path:
    """Write a checkpoint atomically (temporary file, then rename)."""
    tensors: List[Tuple[str, np.ndarray]] = []
    for name, value in params.items():
        if name.startswith((CODEBOOK_PREFIX, OPTIMIZER_PREFIX, HEADS_PREFIX)):
            raise ContractError(f"parameter name '{name}' uses a reserved checkpoint prefix")
        tensors.append((name, value))
    for name, value in (heads or {}).items():
        tensors.append((f"{HEADS_PREFIX}{name}", value))
    if codebook is not None:
        tensors.append((f"{CODEBOOK_PREFIX}centroids", codebook.centroids))
        digest = np.frombuffer(codebook.fingerprint_bytes(), dtype=np.uint8).astype(np.float32)
        tensors.append((f"{CODEBOOK_PREFIX}fingerprint", digest))
    if optimizer is not None:
        for name in sorted(optimizer.m):
            tensors.append((f"{OPTIMIZER_PREFIX}m/{name}", optimizer.m[name]))
            tensors.append((f"{OPTIMIZER_PREFIX}v/{name}", optimizer.v[name]))
        tensors.append((f"{OPTIMIZER_PREFIX}step", np.array(optimizer.step, dtype=np.float32)))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(tensors))
    os.replace(tmp, path)
    logger.bind(component="checkpoint").info(f"Saved {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    tensors = decode_tensors(path.read_bytes())

    ckpt = Checkpoint()
    centroids: Optional[np.ndarray] = None
    digest = b""
    moments: Dict[str, Dict[str, np.ndarray]] = {"m": {}, "v": {}}
    step: Optional[int] = None
    for name, value in tensors:
        if name.startswith(HEADS_PREFIX):
            ckpt.heads[name[len(HEADS_PREFIX) :]] = value
        elif name == f"{CODEBOOK_PREFIX}centroids":
            centroids = value
        elif name == f"{CODEBOOK_PREFIX}fingerprint":
            digest = value.astype(np.uint8).tobytes()
        elif name == f"{OPTIMIZER_PREFIX}step":
            step = int(value)
        elif name.startswith((f"{OPTIMIZER_PREFIX}m/", f"{OPTIMIZER_PREFIX}v/")):
            kind, param = name[len(OPTIMIZER_PREFIX) :].split("/", 1)
            moments[kind][param] = value
        elif name.startswith((CODEBOOK_PREFIX, OPTIMIZER_PREFIX)):
            raise FormatError(f"unknown reserved tensor '{name}'")
        else:
            ckpt.params[name] = value

    if centroids is not None:
        try:
            ckpt.codebook = Codebook(centroids=centroids, fingerprint=digest.hex())
        except ValueError as e:
            raise FormatError(f"stored codebook is invalid: {e}") from e
    if step is not None:
        if set(moments["m"]) != set(moments["v"]):
            raise FormatError("optimizer first and second moments name different parameters")
        state = AdamState()
        state.m, state.v, state.step = moments["m"], moments["v"], step
        ckpt.optimizer = state
    logger.bind(component="checkpoint").debug(f"Loaded {len(tensors)} tensors from {path}")
    return ckpt
