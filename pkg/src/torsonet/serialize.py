"""Binary weight archive.

Layout (all integers little-endian)::

    b"CTRW"                 magic
    u16                     format version
    u32                     metadata length in bytes
    bytes                   UTF-8 JSON metadata: num_classes, conv_activation,
                            dropout_rate, input_shape, class_names, and the ordered list of
                            [node_id, weight_shape, bias_shape]
    f32[...]                parameters, node by node in declaration order,
                            weights (C order) then bias
    u32                     CRC-32 of the parameter payload
"""
from __future__ import annotations

import json
import struct
import warnings
import zlib

import numpy as np

from .errors import CorruptionError, FormatError
from .graph import ModelGraph, build_model

MAGIC = b"CTRW"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


class TruncatedArchiveError(FormatError, OSError):
    pass


def _metadata(model: ModelGraph):
    return {
        "num_classes": model.num_classes,
        "conv_activation": model.conv_activation,
        "dropout_rate": model.dropout_rate,
        "input_shape": list(model.input_shape),
        "class_names": list(model.class_names),
        "nodes": [[nid, list(arrs[0].shape), list(arrs[1].shape)] for nid, arrs in model.param_items()],
    }


def to_bytes(model: ModelGraph) -> bytes:
    meta = json.dumps(_metadata(model), separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                       for _, arrs in model.param_items() for a in arrs)
    return (_PREFIX.pack(MAGIC, VERSION, len(meta)) + meta + payload
            + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF))


def header_size(blob: bytes) -> int:
    """Bytes in the archive that are not parameter payload."""
    _, _, meta_len = _PREFIX.unpack_from(blob)
    return _PREFIX.size + meta_len + _CRC.size


def save_weights(model: ModelGraph, path):
    blob = to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def from_bytes(blob: bytes, conv_activation=None, dtype=np.float32, path=None) -> ModelGraph:
    if len(blob) < _PREFIX.size:
        raise TruncatedArchiveError("archive shorter than its fixed header", path)
    magic, version, meta_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", path)
    if version != VERSION:
        raise FormatError(f"unsupported archive version {version}", path)
    start = _PREFIX.size + meta_len
    if len(blob) < start:
        raise TruncatedArchiveError("archive truncated inside metadata", path)
    try:
        meta = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable metadata: {exc}", path) from None

    file_act = meta["conv_activation"]
    if conv_activation is not None and conv_activation != file_act:
        warnings.warn(f"archive was trained with {file_act!r}; ignoring requested {conv_activation!r}",
                      stacklevel=3)
    model = build_model(meta["num_classes"], file_act, meta.get("dropout_rate", 0.2), seed=0,
                        input_shape=tuple(meta["input_shape"]), dtype=dtype,
                        class_names=meta.get("class_names"))
    expected = [[nid, list(a[0].shape), list(a[1].shape)] for nid, a in model.param_items()]
    if meta["nodes"] != expected:
        raise FormatError("archive layer list does not match the network definition", path)

    n_values = sum(int(np.prod(w)) + int(np.prod(b)) for _, w, b in meta["nodes"])
    end = start + 4 * n_values
    if len(blob) < end + _CRC.size:
        raise TruncatedArchiveError(
            f"archive truncated: {len(blob)} bytes, need {end + _CRC.size}", path)
    if len(blob) > end + _CRC.size:
        raise CorruptionError("trailing bytes after checksum", path)
    payload = blob[start:end]
    (crc,) = _CRC.unpack_from(blob, end)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptionError("payload checksum mismatch", path)

    values = np.frombuffer(payload, dtype="<f4")
    pos = 0
    for _, arrays in model.param_items():
        for a in arrays:
            a[...] = values[pos:pos + a.size].reshape(a.shape)
            pos += a.size
    return model


def load_weights(path, conv_activation=None, dtype=np.float32) -> ModelGraph:
    """Rebuild a model from an archive. The archive's activation always wins."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return from_bytes(blob, conv_activation, dtype, path=str(path))
