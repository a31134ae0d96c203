"""MST1 tensor files and parameter directories.

An MST1 file is the 4 magic bytes ``MST1``, a little-endian uint32 rank R,
R little-endian uint32 dimensions, then the float64 payload in row-major order.
A parameter directory holds one MST1 file per tensor plus ``manifest.json``.
"""

import dataclasses
import importlib
import json
import os
import re
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MST1"
MANIFEST = "manifest.json"


def encode_mst1(tensor):
    t = np.ascontiguousarray(tensor, dtype="<f8")
    if t.ndim == 0:
        t = t.reshape(1)
    header = MAGIC + struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    return header + t.tobytes()


def decode_mst1(buf):
    buf = bytes(buf)
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("bad magic: not an MST1 tensor")
    (rank,) = struct.unpack_from("<I", buf, 4)
    head = 8 + 4 * rank
    if len(buf) < head:
        raise FormatError("truncated MST1 header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != head + 8 * count:
        raise FormatError(f"MST1 payload has {len(buf) - head} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", offset=head).astype(np.float64).reshape(shape)


def write_tensor(path, tensor):
    with open(path, "wb") as fh:
        fh.write(encode_mst1(tensor))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_mst1(fh.read())


def _param_types():
    types = {}
    for name in ("attention", "sac", "applications"):
        mod = importlib.import_module(f"{__package__}.{name}")
        for obj in vars(mod).values():
            if isinstance(obj, type) and dataclasses.is_dataclass(obj):
                types[obj.__name__] = obj
    return types


def _describe(path):
    parts = path.split(".")
    entry = {"role": parts[-1]}
    for key, label in (("heads", "head"), ("scales", "scale"), ("stack", "layer")):
        for i, p in enumerate(parts[:-1]):
            if p == key and i + 1 < len(parts) and parts[i + 1].isdigit():
                entry[label] = int(parts[i + 1])
    return entry


def save_params(directory, params, extra=None):
    """Write every tensor of ``params`` plus a manifest describing the structure."""
    os.makedirs(directory, exist_ok=True)
    tensors = []

    def encode(obj, path):
        if isinstance(obj, np.ndarray):
            fname = re.sub(r"[^A-Za-z0-9_.-]", "_", path or "tensor") + ".mst"
            write_tensor(os.path.join(directory, fname), obj)
            entry = {"name": path, "file": fname, "shape": list(obj.shape)}
            entry.update(_describe(path))
            tensors.append(entry)
            return {"tensor": fname}
        if dataclasses.is_dataclass(obj):
            out = {"__type__": type(obj).__name__}
            for f in dataclasses.fields(obj):
                out[f.name] = encode(getattr(obj, f.name), f"{path}.{f.name}" if path else f.name)
            return out
        if isinstance(obj, (list, tuple)):
            return [encode(v, f"{path}.{i}" if path else str(i)) for i, v in enumerate(obj)]
        if obj is None or isinstance(obj, (str, int, float, bool)):
            return obj
        raise TypeError(f"cannot serialize {type(obj).__name__} at {path!r}")

    manifest = {"format": "MST1", "tree": encode(params, ""), "tensors": tensors}
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_params(directory):
    try:
        with open(os.path.join(directory, MANIFEST)) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest in {directory}: {exc}") from exc
    types = _param_types()

    def decode(obj):
        if isinstance(obj, dict) and "tensor" in obj and len(obj) == 1:
            return read_tensor(os.path.join(directory, obj["tensor"]))
        if isinstance(obj, dict) and "__type__" in obj:
            cls = types.get(obj["__type__"])
            if cls is None:
                raise FormatError(f"unknown parameter type {obj['__type__']!r}")
            return cls(**{k: decode(v) for k, v in obj.items() if k != "__type__"})
        if isinstance(obj, list):
            return [decode(v) for v in obj]
        return obj

    return decode(manifest["tree"])
