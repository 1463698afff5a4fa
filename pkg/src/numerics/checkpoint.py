"""
@file checkpoint.py
@brief "JFERC1" binary tensor container
@details Layout: the 6-byte magic ``JFERC1`` followed by records until EOF.
Each record is ``name_len:u64 | name:utf-8 | rank:u64 | dims:u64*rank |
data:f64*prod(dims)``, every integer and float little-endian. The same
container stores model checkpoints and precomputed text embeddings.
"""

from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from errors import FormatError
from numerics.tensor import Tensor

MAGIC = b"JFERC1"
_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")

ArrayLike = Union[np.ndarray, Tensor]


def encode_tensors(tensors: Mapping[str, ArrayLike]) -> bytes:
    """Serialize name -> array pairs in insertion order."""
    chunks = [MAGIC]
    for name, value in tensors.items():
        array = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
        encoded_name = name.encode("utf-8")
        chunks.append(np.array([len(encoded_name)], dtype=_U64).tobytes())
        chunks.append(encoded_name)
        chunks.append(np.array([array.ndim] + list(array.shape), dtype=_U64).tobytes())
        chunks.append(np.ascontiguousarray(array, dtype=_F64).tobytes())
    return b"".join(chunks)


def decode_tensors(payload: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    """Parse a container produced by ``encode_tensors``."""
    if payload[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: bad magic {payload[:len(MAGIC)]!r}, expected {MAGIC!r}")
    offset = len(MAGIC)
    tensors: Dict[str, np.ndarray] = {}

    def take(count: int, what: str) -> bytes:
        nonlocal offset
        if offset + count > len(payload):
            raise FormatError(f"{source}: truncated while reading {what} at byte {offset}")
        chunk = payload[offset:offset + count]
        offset += count
        return chunk

    while offset < len(payload):
        name_len = int(np.frombuffer(take(8, "name length"), dtype=_U64)[0])
        try:
            name = take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: tensor name is not valid UTF-8 at byte {offset}") from exc
        rank = int(np.frombuffer(take(8, f"rank of '{name}'"), dtype=_U64)[0])
        dims = tuple(int(d) for d in np.frombuffer(take(8 * rank, f"dims of '{name}'"), dtype=_U64))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(8 * count, f"data of '{name}'"), dtype=_F64)
        if name in tensors:
            raise FormatError(f"{source}: duplicate tensor name '{name}'")
        tensors[name] = data.astype(np.float64).reshape(dims)
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, ArrayLike]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors(tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found at {path}")
    return decode_tensors(path.read_bytes(), source=str(path))
