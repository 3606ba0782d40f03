"""Binary model container.

Layout (all integers little-endian, documented in docs/model_format.md):

    bytes 0-3   magic "DNN1"
    u32         layer-table length L
    L bytes     UTF-8 JSON {"input_shape": [C,H,W], "layers": [...]}
    u64         parameter element count P
    P*4 bytes   float32 parameter blob, layer order, W before b
    u32         metadata length M
    M bytes     UTF-8 JSON metadata
    (end of file; trailing bytes are an error)

Round-trips are bit-exact: the blob is the raw float32 parameter memory.
"""

import json
import struct

import numpy as np

from . import layers as L
from .model import Model

MAGIC = b"DNN1"


class ModelFormatError(ValueError):
    """Corrupt or truncated model file; carries the failing byte offset."""

    def __init__(self, position, message):
        super().__init__(f"byte {position}: {message}")
        self.position = position


def _canon(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_model(model, path):
    table = _canon({"input_shape": list(model.input_shape),
                    "layers": [s.to_json() for s in model.specs]})
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                    for a in model.parameter_arrays())
    meta = dict(model.metadata)
    meta["parameter_count"] = model.parameter_count
    meta_b = _canon(meta)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(table)))
        f.write(table)
        f.write(struct.pack("<Q", len(blob) // 4))
        f.write(blob)
        f.write(struct.pack("<I", len(meta_b)))
        f.write(meta_b)
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ModelFormatError(self.pos, f"truncated while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def load_model(path):
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise ModelFormatError(0, "bad magic, not a model file")
    tlen = struct.unpack("<I", r.take(4, "layer table length"))[0]
    try:
        table = json.loads(r.take(tlen, "layer table"))
        specs = [L.LayerSpec.from_json(o) for o in table["layers"]]
        input_shape = tuple(table["input_shape"])
    except (ValueError, KeyError, TypeError) as e:
        raise ModelFormatError(8, f"unreadable layer table: {e}") from None
    count = struct.unpack("<Q", r.take(8, "parameter count"))[0]
    blob_at = r.pos
    blob = np.frombuffer(r.take(count * 4, "parameter blob"), dtype="<f4")
    mlen = struct.unpack("<I", r.take(4, "metadata length"))[0]
    try:
        meta = json.loads(r.take(mlen, "metadata"))
    except ValueError as e:
        raise ModelFormatError(r.pos, f"unreadable metadata: {e}") from None
    if r.pos != len(data):
        raise ModelFormatError(r.pos, f"{len(data) - r.pos} trailing bytes")

    shapes = L.infer_shapes(specs, input_shape)
    ins = [input_shape] + shapes[:-1]
    params = []
    off = 0
    for spec, in_shape in zip(specs, ins):
        p = {}
        for name, shape in L.param_shapes(spec, in_shape).items():
            n = int(np.prod(shape))
            if off + n > count:
                raise ModelFormatError(blob_at + off * 4,
                                       "parameter blob shorter than layer table requires")
            p[name] = blob[off:off + n].reshape(shape).copy()
            off += n
        params.append(p)
    if off != count:
        raise ModelFormatError(blob_at + off * 4,
                               f"blob holds {count} values, layers take {off}")
    if meta.get("parameter_count") != count:
        raise ModelFormatError(blob_at,
                               f"declared parameter count {meta.get('parameter_count')} "
                               f"!= stored {count}")
    return Model(specs, input_shape, params, meta)
