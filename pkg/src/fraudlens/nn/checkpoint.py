"""Single-file model checkpoints.

Layout (all integers little-endian):

    bytes 0-3   magic b"FLCK"
    bytes 4-7   uint32 format version (currently 1)
    bytes 8-11  uint32 header length L
    bytes 12-.. UTF-8 JSON header of L bytes
    then, for each entry of header["tensors"] in order, the raw float32
    little-endian row-major tensor data.

The header echoes the model config, the Adam step counter, and the ordered
tensor directory [{name, shape}] covering parameters first, then Adam first
and second moments (prefixed "adam_m." / "adam_v.").
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .model import Model, ModelConfig

MAGIC = b"FLCK"
VERSION = 1


def save_model(model: Model, path) -> None:
    params = model.params()
    tensors = []
    blobs = []
    for key, arr in params.items():
        tensors.append({"name": key, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    for prefix, table in (("adam_m.", model.adam.m), ("adam_v.", model.adam.v)):
        for key, arr in table.items():
            tensors.append({"name": prefix + key, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    config = asdict(model.config)
    config["channels"] = list(config["channels"])
    header = json.dumps(
        {"config": config, "adam_t": model.adam.t, "tensors": tensors},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cfg_dict = dict(header["config"])
        cfg_dict["channels"] = tuple(cfg_dict["channels"])
        config = ModelConfig(**cfg_dict)
        model = Model(config)
        dtype = config.np_dtype
        loaded: dict = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            loaded[entry["name"]] = data.reshape(shape).astype(dtype)
    params = {k: v for k, v in loaded.items() if not k.startswith("adam_")}
    model.set_params(params)
    for key in model.adam.m:
        np.copyto(model.adam.m[key], loaded["adam_m." + key])
        np.copyto(model.adam.v[key], loaded["adam_v." + key])
    model.adam.t = int(header["adam_t"])
    return model
