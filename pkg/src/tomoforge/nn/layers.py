"""Layers with explicit forward/backward passes.

Tensors are channels-last: (batch, length, channels) for 1-D layers and
(batch, height, width, channels) for 2-D layers. Each layer caches what its
backward pass needs during ``forward(..., training=True)``, so a layer
instance belongs to one training loop at a time.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.trainable = True

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout, need_dx=True):
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def config(self) -> dict:
        return {}

    def spec(self) -> dict:
        return {"kind": self.kind, "trainable": self.trainable, **self.config()}


def _uniform_init(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _pad_amount(padding, kernel):
    if padding == "same":
        return (kernel - 1) // 2, kernel // 2
    if padding == "valid":
        return 0, 0
    p = int(padding)
    return p, p


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, units, rng=None):
        super().__init__()
        self.n_in, self.units = int(n_in), int(units)
        rng = np.random.default_rng(rng)
        self.params = {"W": _uniform_init(rng, self.n_in, (self.n_in, self.units)),
                       "b": np.zeros(self.units)}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"dense expects (*, {self.n_in}), got {x.shape}")
        if training:
            self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout, need_dx=True):
        if self.trainable:
            self.grads = {"W": self._x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["W"].T if need_dx else None

    def output_shape(self, in_shape):
        return (self.units,)

    def config(self):
        return {"n_in": self.n_in, "units": self.units}


class Conv1D(Layer):
    """1-D convolution, weights (kernel, c_in, c_out)."""

    kind = "conv1d"

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding="same", rng=None):
        super().__init__()
        self.c_in, self.c_out, self.kernel, self.stride = int(c_in), int(c_out), int(kernel), int(stride)
        self.padding = padding
        rng = np.random.default_rng(rng)
        fan_in = self.kernel * self.c_in
        self.params = {"W": _uniform_init(rng, fan_in, (self.kernel, self.c_in, self.c_out)),
                       "b": np.zeros(self.c_out)}

    def _out_len(self, length):
        lo, hi = _pad_amount(self.padding, self.kernel)
        return (length + lo + hi - self.kernel) // self.stride + 1

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ShapeMismatch(f"conv1d expects (*, L, {self.c_in}), got {x.shape}")
        lo, hi = _pad_amount(self.padding, self.kernel)
        xp = np.pad(x, ((0, 0), (lo, hi), (0, 0))) if lo or hi else x
        n_out = self._out_len(x.shape[1])
        s = self.stride
        cols = np.concatenate([xp[:, k:k + s * (n_out - 1) + 1:s, :] for k in range(self.kernel)], axis=2)
        if training:
            self._cols, self._xshape, self._pshape = cols, x.shape, xp.shape
        W = self.params["W"].reshape(-1, self.c_out)
        return cols @ W + self.params["b"]

    def backward(self, dout, need_dx=True):
        n, n_out, _ = dout.shape
        W = self.params["W"].reshape(-1, self.c_out)
        if self.trainable:
            cols = self._cols.reshape(-1, W.shape[0])
            d2 = dout.reshape(-1, self.c_out)
            self.grads = {"W": (cols.T @ d2).reshape(self.params["W"].shape), "b": d2.sum(axis=0)}
        if not need_dx:
            return None
        dcols = dout @ W.T
        dxp = np.zeros(self._pshape)
        s, c = self.stride, self.c_in
        for k in range(self.kernel):
            dxp[:, k:k + s * (n_out - 1) + 1:s, :] += dcols[:, :, k * c:(k + 1) * c]
        lo, _ = _pad_amount(self.padding, self.kernel)
        return dxp[:, lo:lo + self._xshape[1], :]

    def output_shape(self, in_shape):
        return (self._out_len(in_shape[0]), self.c_out)

    def config(self):
        return {"c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}


class Conv2D(Layer):
    """2-D convolution, weights (kh, kw, c_in, c_out) with a square kernel."""

    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding="same", rng=None):
        super().__init__()
        self.c_in, self.c_out, self.kernel, self.stride = int(c_in), int(c_out), int(kernel), int(stride)
        self.padding = padding
        rng = np.random.default_rng(rng)
        fan_in = self.kernel * self.kernel * self.c_in
        self.params = {"W": _uniform_init(rng, fan_in, (self.kernel, self.kernel, self.c_in, self.c_out)),
                       "b": np.zeros(self.c_out)}

    def _out_len(self, length):
        lo, hi = _pad_amount(self.padding, self.kernel)
        return (length + lo + hi - self.kernel) // self.stride + 1

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise ShapeMismatch(f"conv2d expects (*, H, W, {self.c_in}), got {x.shape}")
        lo, hi = _pad_amount(self.padding, self.kernel)
        xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0))) if lo or hi else x
        ho, wo = self._out_len(x.shape[1]), self._out_len(x.shape[2])
        s, K = self.stride, self.kernel
        cols = np.concatenate([xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
                               for i in range(K) for j in range(K)], axis=3)
        if training:
            self._cols, self._xshape, self._pshape = cols, x.shape, xp.shape
        W = self.params["W"].reshape(-1, self.c_out)
        return cols @ W + self.params["b"]

    def backward(self, dout, need_dx=True):
        n, ho, wo, _ = dout.shape
        W = self.params["W"].reshape(-1, self.c_out)
        if self.trainable:
            cols = self._cols.reshape(-1, W.shape[0])
            d2 = dout.reshape(-1, self.c_out)
            self.grads = {"W": (cols.T @ d2).reshape(self.params["W"].shape), "b": d2.sum(axis=0)}
        if not need_dx:
            return None
        dcols = dout @ W.T
        dxp = np.zeros(self._pshape)
        s, K, c = self.stride, self.kernel, self.c_in
        for i in range(K):
            for j in range(K):
                k = i * K + j
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[..., k * c:(k + 1) * c]
        lo, _ = _pad_amount(self.padding, self.kernel)
        return dxp[:, lo:lo + self._xshape[1], lo:lo + self._xshape[2], :]

    def output_shape(self, in_shape):
        return (self._out_len(in_shape[0]), self._out_len(in_shape[1]), self.c_out)

    def config(self):
        return {"c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}


class MaxPool1D(Layer):
    kind = "maxpool1d"

    def __init__(self, size=2):
        super().__init__()
        self.size = int(size)

    def forward(self, x, training=False):
        n, length, c = x.shape
        lo = length // self.size
        xr = x[:, :lo * self.size].reshape(n, lo, self.size, c)
        if training:
            self._arg = xr.argmax(axis=2)
            self._xshape = x.shape
        return xr.max(axis=2)

    def backward(self, dout, need_dx=True):
        if not need_dx:
            return None
        n, length, c = self._xshape
        lo = dout.shape[1]
        dx = np.zeros((n, lo, self.size, c))
        np.put_along_axis(dx, self._arg[:, :, None, :], dout[:, :, None, :], axis=2)
        out = np.zeros(self._xshape)
        out[:, :lo * self.size] = dx.reshape(n, lo * self.size, c)
        return out

    def output_shape(self, in_shape):
        return (in_shape[0] // self.size, in_shape[1])

    def config(self):
        return {"size": self.size}


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, size=2):
        super().__init__()
        self.size = int(size)

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        s = self.size
        ho, wo = h // s, w // s
        xr = x[:, :ho * s, :wo * s].reshape(n, ho, s, wo, s, c).transpose(0, 1, 3, 5, 2, 4)
        xr = xr.reshape(n, ho, wo, c, s * s)
        if training:
            self._arg = xr.argmax(axis=4)
            self._xshape = x.shape
        return xr.max(axis=4)

    def backward(self, dout, need_dx=True):
        if not need_dx:
            return None
        n, h, w, c = self._xshape
        s = self.size
        ho, wo = dout.shape[1:3]
        d = np.zeros((n, ho, wo, c, s * s))
        np.put_along_axis(d, self._arg[..., None], dout[..., None], axis=4)
        d = d.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * s, wo * s, c)
        out = np.zeros(self._xshape)
        out[:, :ho * s, :wo * s] = d
        return out

    def output_shape(self, in_shape):
        return (in_shape[0] // self.size, in_shape[1] // self.size, in_shape[2])

    def config(self):
        return {"size": self.size}


class Upsample1D(Layer):
    """Nearest-neighbour upsampling along the length axis."""

    kind = "upsample1d"

    def __init__(self, size=2):
        super().__init__()
        self.size = int(size)

    def forward(self, x, training=False):
        return np.repeat(x, self.size, axis=1)

    def backward(self, dout, need_dx=True):
        if not need_dx:
            return None
        n, length, c = dout.shape
        return dout.reshape(n, length // self.size, self.size, c).sum(axis=2)

    def output_shape(self, in_shape):
        return (in_shape[0] * self.size, in_shape[1])

    def config(self):
        return {"size": self.size}


class Upsample2D(Layer):
    kind = "upsample2d"

    def __init__(self, size=2):
        super().__init__()
        self.size = int(size)

    def forward(self, x, training=False):
        return np.repeat(np.repeat(x, self.size, axis=1), self.size, axis=2)

    def backward(self, dout, need_dx=True):
        if not need_dx:
            return None
        n, h, w, c = dout.shape
        s = self.size
        return dout.reshape(n, h // s, s, w // s, s, c).sum(axis=(2, 4))

    def output_shape(self, in_shape):
        return (in_shape[0] * self.size, in_shape[1] * self.size, in_shape[2])

    def config(self):
        return {"size": self.size}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        if training:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dout, need_dx=True):
        return dout * self._mask if need_dx else None


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        if training:
            self._out = out
        return out

    def backward(self, dout, need_dx=True):
        return dout * self._out * (1.0 - self._out) if need_dx else None


class Linear(Layer):
    """Identity activation."""

    kind = "linear"

    def forward(self, x, training=False):
        return x

    def backward(self, dout, need_dx=True):
        return dout if need_dx else None


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        if training:
            self._xshape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_dx=True):
        return dout.reshape(self._xshape) if need_dx else None

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x, training=False):
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeMismatch(f"cannot reshape {x.shape[1:]} to {self.shape}")
        if training:
            self._xshape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dout, need_dx=True):
        return dout.reshape(self._xshape) if need_dx else None

    def output_shape(self, in_shape):
        return self.shape

    def config(self):
        return {"shape": list(self.shape)}


LAYER_TYPES = {cls.kind: cls for cls in
               (Dense, Conv1D, Conv2D, MaxPool1D, MaxPool2D, Upsample1D, Upsample2D,
                ReLU, Sigmoid, Linear, Flatten, Reshape)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    trainable = spec.pop("trainable", True)
    layer = LAYER_TYPES[kind](**spec)
    layer.trainable = trainable
    return layer
