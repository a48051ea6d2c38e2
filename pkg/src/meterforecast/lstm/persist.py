"""Binary model files.

Layout (little-endian)::

    8 bytes   magic  b"MFLSTM\\x00\\x01"
    4 bytes   format version (uint32)
    8 bytes   header length in bytes (uint64)
    header    UTF-8 JSON: topology, array shapes, feature order, stats, metadata
    payload   float64 weights, arrays concatenated in canonical order
              W1, U1, b1, W2, U2, b2, Wd, bd (each C-ordered)
    32 bytes  SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..features import FEATURE_ORDER, NormStats
from .model import LstmModel
from .network import Network

MAGIC = b"MFLSTM\x00\x01"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


class ModelFileError(ValueError):
    """Unreadable, corrupted or incompatible model file."""


def _stats_to_json(stats: NormStats) -> dict:
    return {"meters": {k: list(v) for k, v in sorted(stats.meters.items())},
            "aggregate": list(stats.aggregate), "temperature": list(stats.temperature),
            "humidity": list(stats.humidity)}


def _stats_from_json(d: dict) -> NormStats:
    return NormStats({k: tuple(v) for k, v in d["meters"].items()}, tuple(d["aggregate"]),
                     tuple(d["temperature"]), tuple(d["humidity"]))


def model_to_bytes(model: LstmModel) -> bytes:
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in model.network.arrays()]
    header = {
        "topology": {"n_features": model.network.n_features,
                     "hidden1": model.network.layer1.hidden_size,
                     "hidden2": model.network.layer2.hidden_size,
                     "horizon": model.network.horizon},
        "shapes": [list(a.shape) for a in arrays],
        "feature_order": list(model.feature_order),
        "norm_stats": _stats_to_json(model.norm_stats),
        "training_meta": model.training_meta,
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(a.tobytes() for a in arrays)
    return body + hashlib.sha256(body).digest()


def model_from_bytes(blob: bytes, feature_order=FEATURE_ORDER) -> LstmModel:
    if len(blob) < _PREFIX.size + _DIGEST:
        raise ModelFileError("model file truncated")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFileError("model file checksum mismatch (corrupted or truncated)")
    magic, version, n_head = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    pos = _PREFIX.size
    header = json.loads(body[pos:pos + n_head].decode())
    pos += n_head
    order = tuple(header["feature_order"])
    if feature_order is not None and order != tuple(feature_order):
        raise ModelFileError("model was trained with a different feature order")
    arrays = []
    for shape in header["shapes"]:
        size = int(np.prod(shape)) * 8
        if pos + size > len(body):
            raise ModelFileError("weight payload shorter than declared")
        arrays.append(np.frombuffer(body[pos:pos + size], dtype="<f8").reshape(shape).astype(np.float64))
        pos += size
    if pos != len(body):
        raise ModelFileError("trailing bytes after weight payload")
    return LstmModel(Network.from_arrays(arrays), _stats_from_json(header["norm_stats"]),
                     order, header["training_meta"])


def save_model(model: LstmModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path, feature_order=FEATURE_ORDER) -> LstmModel:
    return model_from_bytes(Path(path).read_bytes(), feature_order)
