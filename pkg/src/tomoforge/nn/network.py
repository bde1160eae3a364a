"""Sequential networks, weight (de)serialization and freezing."""
from __future__ import annotations

import copy
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, SchemaError, ShapeMismatch
from .layers import Layer, layer_from_spec

MAGIC = b"TFNN"


class Network:
    """Ordered stack of layers.

    Parameters
    ----------
    layers : list of Layer
    input_shape : tuple
        Per-sample input shape, e.g. ``(36,)``.
    meta : dict, optional
        Free-form metadata kept with the weights (role, seed, training config).
    encoder_end : int, optional
        Number of leading layers forming the encoder, when the net has one.
    """

    def __init__(self, layers: list[Layer], input_shape=(36,), meta=None, encoder_end=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.meta = dict(meta or {})
        self.encoder_end = encoder_end
        self.output_shape = self._check_shapes()

    def _check_shapes(self):
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = layer.output_shape(shape)
        # dry run on one sample catches incompatible neighbours
        self.forward(np.zeros((1,) + self.input_shape))
        return tuple(shape)

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"network expects (*, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def predict(self, x, batch_size=8192):
        x = np.asarray(x, dtype=float)
        if x.shape[0] <= batch_size:
            return self.forward(x)
        return np.concatenate([self.forward(x[i:i + batch_size])
                               for i in range(0, x.shape[0], batch_size)])

    def first_trainable(self) -> int:
        for i, layer in enumerate(self.layers):
            if layer.trainable and layer.params:
                return i
        return len(self.layers)

    def backward(self, dout):
        """Backpropagate ``dout``; stops at the first trainable layer."""
        stop = self.first_trainable()
        for i in range(len(self.layers) - 1, stop - 1, -1):
            dout = self.layers[i].backward(dout, need_dx=i > stop)
        return dout

    def trainable_params(self):
        """Yield ``(layer, name)`` for every parameter that receives updates."""
        for layer in self.layers:
            if layer.trainable:
                for name in layer.params:
                    yield layer, name

    def n_params(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params.values())

    def freeze(self, upto: int | None = None):
        upto = len(self.layers) if upto is None else upto
        for layer in self.layers[:upto]:
            layer.trainable = False
        return self

    def param_digest(self, frozen_only=False) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            if frozen_only and layer.trainable:
                continue
            for name in sorted(layer.params):
                h.update(np.ascontiguousarray(layer.params[name]).tobytes())
        return h.hexdigest()

    def clone(self) -> "Network":
        return copy.deepcopy(self)

    def spec(self) -> dict:
        return {"input_shape": list(self.input_shape), "encoder_end": self.encoder_end,
                "layers": [layer.spec() for layer in self.layers]}

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        """Write JSON header plus a little-endian float32 weight blob."""
        entries, blobs = [], []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                arr = layer.params[name]
                entries.append({"layer": i, "name": name, "shape": list(arr.shape)})
                blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        header = {"format": "tomoforge.nn", "version": 1, "spec": self.spec(),
                  "meta": self.meta, "params": entries}
        hb = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            for b in blobs:
                fh.write(b)

    @classmethod
    def load(cls, path) -> "Network":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise SchemaError(f"{path}: not a network file")
        (n,) = struct.unpack("<I", raw[4:8])
        try:
            header = json.loads(raw[8:8 + n])
        except ValueError as exc:
            raise SchemaError(f"{path}: corrupt header") from exc
        if header.get("format") != "tomoforge.nn":
            raise SchemaError(f"{path}: unknown format {header.get('format')!r}")
        spec = header["spec"]
        layers = [layer_from_spec(s) for s in spec["layers"]]
        offset = 8 + n
        for e in header["params"]:
            size = int(np.prod(e["shape"]))
            chunk = raw[offset:offset + 4 * size]
            if len(chunk) != 4 * size:
                raise SchemaError(f"{path}: truncated weight blob")
            arr = np.frombuffer(chunk, dtype="<f4").astype(float).reshape(e["shape"])
            layers[e["layer"]].params[e["name"]] = arr
            offset += 4 * size
        return cls(layers, tuple(spec["input_shape"]), header.get("meta"), spec.get("encoder_end"))

    def as_float32(self) -> "Network":
        """Round every parameter through float32, matching a save/load cycle."""
        for layer in self.layers:
            for name, arr in layer.params.items():
                layer.params[name] = arr.astype(np.float32).astype(float)
        return self


def sequential(layers, input_shape=(36,), **kw) -> Network:
    if not layers:
        raise ConfigError("a network needs at least one layer")
    return Network(layers, input_shape, **kw)
