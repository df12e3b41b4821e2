"""Versioned model files: a JSON header followed by raw little-endian float64 arrays.

Layout::

    b"MISTLINK"  uint32 version  uint64 header_len  header (UTF-8 JSON)  array bytes

The header lists every array with its shape and byte offset into the
payload. Nothing time- or host-dependent is written, so saving the same
model twice gives identical bytes.
"""

import json
import struct

import numpy as np

from .encoder import ProjectionEncoder
from .errors import DataError
from .kge import ModelKind
from .trainer import KgeModel, TrainConfig

MAGIC = b"MISTLINK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def write_bundle(path, meta, arrays):
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def read_bundle(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise DataError(f"{path}: truncated model file")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: not a model file")
    if version != VERSION:
        raise DataError(f"{path}: unsupported model file version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header ({exc})") from None
    payload = memoryview(raw)[start + hlen:]
    arrays = {}
    for e in header["arrays"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = e["offset"] + 8 * n
        if end > len(payload):
            raise DataError(f"{path}: truncated array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(payload[e["offset"]:end], dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays


def save_model(path, model):
    """Write a :class:`KgeModel` or :class:`~mistlink.baseline.BcModel`."""
    from .baseline import BcModel

    if isinstance(model, BcModel):
        meta = {
            "type": "bc",
            "bias": model.bias,
            "threshold": model.threshold,
            "encoder": model.encoder_config,
            "train": model.train_config.to_dict(),
            "loss_trace": list(model.loss_trace),
        }
        write_bundle(path, meta, {"weight": model.weight})
        return
    meta = {
        "type": "kge",
        "kind": ModelKind.parse(model.kind).value,
        "mode": model.mode,
        "encoder": model.encoder_config,
        "train": model.train_config.to_dict(),
        "loss_trace": list(model.loss_trace),
        "thresholds": model.thresholds.to_json() if model.thresholds is not None else None,
    }
    write_bundle(path, meta, model.params())


def load_model(path):
    from .baseline import BcModel
    from .predictor import ThresholdTable

    meta, arrays = read_bundle(path)
    train_config = TrainConfig.from_dict(meta["train"])
    if meta["type"] == "bc":
        return BcModel(arrays["weight"], float(meta["bias"]), float(meta["threshold"]),
                       meta["encoder"], train_config, meta["loss_trace"])
    if meta["type"] != "kge":
        raise DataError(f"{path}: unknown model type {meta['type']!r}")
    mist_proj = None
    if "mist_w" in arrays:
        mist_proj = ProjectionEncoder(arrays["mist_w"], arrays["mist_b"])
    thresholds = ThresholdTable.from_json(meta["thresholds"]) if meta["thresholds"] else None
    return KgeModel(
        ModelKind.parse(meta["kind"]),
        ProjectionEncoder(arrays["tweet_w"], arrays["tweet_b"]),
        mist_proj,
        arrays.get("core"),
        meta["encoder"],
        train_config,
        meta["loss_trace"],
        thresholds,
        meta["mode"],
    )
