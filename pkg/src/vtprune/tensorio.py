"""Reading and writing the safetensors interchange files.

Two file kinds: projector weights ("proj.{i}.weight"/"proj.{i}.bias" plus
an "activation" metadata key) and token dumps ("vision_tokens" plus an
optional "patch_ids"). The format itself is the standard safetensors
container: little-endian u64 header length, JSON header with dtype, shape
and data_offsets per tensor, then the raw buffer.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputFormatError
from .numerics import TokenMatrix
from .projector import ACTIVATIONS, AffineLayer, Projector

_DTYPES = {
    "F32": np.dtype("<f4"),
    "F64": np.dtype("<f8"),
    "I32": np.dtype("<i4"),
    "I64": np.dtype("<i8"),
}
_DTYPE_NAMES = {np.dtype(np.float32): "F32", np.dtype(np.float64): "F64",
                np.dtype(np.int32): "I32", np.dtype(np.int64): "I64"}
_MAX_HEADER = 100 * 1024 * 1024


def write_safetensors(path, tensors, metadata=None) -> None:
    """Write name->ndarray mapping (insertion order preserved on disk)."""
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_NAMES:
            raise InputFormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        dtype_name = _DTYPE_NAMES[arr.dtype]
        raw = arr.astype(_DTYPES[dtype_name], copy=False).tobytes()
        header[name] = {
            "dtype": dtype_name,
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    head += b" " * (-(8 + len(head)) % 8)  # align data section to 8 bytes
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for raw in chunks:
            f.write(raw)


def read_safetensors(path):
    """Return (tensors, metadata) from a safetensors file."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise InputFormatError(f"{path}: truncated safetensors file")
    (head_len,) = struct.unpack("<Q", blob[:8])
    if head_len > _MAX_HEADER or 8 + head_len > len(blob):
        raise InputFormatError(f"{path}: header length {head_len} out of bounds")
    try:
        header = json.loads(blob[8 : 8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"{path}: malformed safetensors header: {exc}") from exc
    if not isinstance(header, dict):
        raise InputFormatError(f"{path}: safetensors header must be a JSON object")
    data = blob[8 + head_len :]
    metadata = header.pop("__metadata__", {})
    tensors = {}
    for name, info in header.items():
        try:
            dtype_name = info["dtype"]
            shape = tuple(int(s) for s in info["shape"])
            start, end = info["data_offsets"]
        except (TypeError, KeyError, ValueError) as exc:
            raise InputFormatError(f"{path}: bad entry for tensor {name!r}") from exc
        if dtype_name not in _DTYPES:
            raise InputFormatError(f"{path}: unsupported dtype {dtype_name!r} for {name!r}")
        dtype = _DTYPES[dtype_name]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if not (0 <= start <= end <= len(data)) or end - start != count * dtype.itemsize:
            raise InputFormatError(f"{path}: data_offsets for {name!r} are inconsistent")
        arr = np.frombuffer(data[start:end], dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=False)
    return tensors, dict(metadata)


def save_projector(path, projector: Projector) -> None:
    tensors = {}
    for i, layer in enumerate(projector.layers):
        tensors[f"proj.{i}.weight"] = layer.weight
        tensors[f"proj.{i}.bias"] = layer.bias
    metadata = {"activation": projector.activation}
    if projector.gap_activations is not None:
        metadata["gap_activations"] = ",".join(projector.gap_activations)
    write_safetensors(path, tensors, metadata)


def load_projector(path) -> Projector:
    tensors, metadata = read_safetensors(path)
    activation = metadata.get("activation")
    if activation is None:
        raise InputFormatError(f"{path}: missing 'activation' metadata key")
    if activation not in ACTIVATIONS:
        raise InputFormatError(f"{path}: unknown activation {activation!r}")
    expected = set()
    n_layers = 0
    while f"proj.{n_layers}.weight" in tensors:
        expected.add(f"proj.{n_layers}.weight")
        expected.add(f"proj.{n_layers}.bias")
        n_layers += 1
    if n_layers == 0:
        raise InputFormatError(f"{path}: no 'proj.0.weight' tensor found")
    stray = set(tensors) - expected
    if stray:
        raise InputFormatError(
            f"{path}: unexpected tensors {sorted(stray)} "
            "(index sequence must be gap-free and biases paired)"
        )
    layers = []
    for i in range(n_layers):
        w = tensors[f"proj.{i}.weight"]
        b = tensors.get(f"proj.{i}.bias")
        if b is None:
            raise InputFormatError(f"{path}: missing proj.{i}.bias")
        if w.dtype != np.float32 or b.dtype != np.float32:
            raise InputFormatError(f"{path}: proj.{i} tensors must be F32")
        if w.ndim != 2 or b.ndim != 1:
            raise InputFormatError(f"{path}: proj.{i} has wrong rank")
        layers.append(AffineLayer(w, b))
    gaps = None
    if "gap_activations" in metadata and n_layers > 1:
        gaps = tuple(metadata["gap_activations"].split(","))
        if len(gaps) != n_layers - 1 or any(g not in ACTIVATIONS for g in gaps):
            raise InputFormatError(f"{path}: malformed gap_activations metadata")
    try:
        return Projector(layers=layers, activation=activation, gap_activations=gaps)
    except Exception as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def save_tokens(path, tokens: TokenMatrix) -> None:
    tensors = {"vision_tokens": tokens.data}
    if tokens.patch_ids is not None:
        tensors["patch_ids"] = tokens.patch_ids
    write_safetensors(path, tensors)


def load_tokens(path) -> TokenMatrix:
    tensors, _ = read_safetensors(path)
    if "vision_tokens" not in tensors:
        raise InputFormatError(f"{path}: missing 'vision_tokens' tensor")
    stray = set(tensors) - {"vision_tokens", "patch_ids"}
    if stray:
        raise InputFormatError(f"{path}: unexpected tensors {sorted(stray)}")
    vt = tensors["vision_tokens"]
    if vt.dtype != np.float32 or vt.ndim != 2:
        raise InputFormatError(f"{path}: 'vision_tokens' must be a 2-D F32 tensor")
    ids = tensors.get("patch_ids")
    if ids is not None and (ids.dtype != np.int32 or ids.ndim != 1):
        raise InputFormatError(f"{path}: 'patch_ids' must be a 1-D I32 tensor")
    try:
        return TokenMatrix(vt, patch_ids=ids)
    except Exception as exc:
        raise InputFormatError(f"{path}: {exc}") from exc
