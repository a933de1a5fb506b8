"""A small convolutional network stack with hand-written backpropagation.

Tensors are numpy arrays laid out ``(batch, channels, height, width)``.
Every layer exposes ``forward(x) -> (y, ctx)`` and ``backward(ctx, dy) ->
(param_grads, dx)``; :class:`Network` chains them and owns the parameters.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .waveform import InvalidInput


class StaleCache(RuntimeError):
    """Backward was called with activations from before a parameter update."""


class Layer:
    params: list = []

    def out_shape(self, in_shape):
        return in_shape

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params))

    def flops(self, in_shape) -> int:
        return 0

    def init(self, rng, dtype):
        pass

    def spec(self) -> dict:
        return {"type": type(self).__name__}


class Conv2D(Layer):
    """Cross-correlation with bias; weights ``(out, in, k, k)``."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0):
        self.in_ch, self.out_ch, self.kernel = int(in_ch), int(out_ch), int(kernel)
        self.stride, self.padding = int(stride), int(padding)
        self.params = [np.zeros((self.out_ch, self.in_ch, self.kernel, self.kernel)),
                       np.zeros(self.out_ch)]

    def spec(self):
        return {"type": "Conv2D", "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}

    def init(self, rng, dtype):
        fan_in = self.in_ch * self.kernel**2
        lim = np.sqrt(6.0 / fan_in)
        self.params = [rng.uniform(-lim, lim, self.params[0].shape).astype(dtype),
                       np.zeros(self.out_ch, dtype)]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise InvalidInput(f"Conv2D expects {self.in_ch} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise InvalidInput("Conv2D kernel larger than padded input")
        return (self.out_ch, ho, wo)

    def flops(self, in_shape):
        _, ho, wo = self.out_shape(in_shape)
        return 2 * self.kernel**2 * self.in_ch * self.out_ch * ho * wo

    def forward(self, x):
        w, b = self.params
        k, s, p = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        _, ho, wo = self.out_shape(x.shape[1:])
        # (B, C, k*k, Ho, Wo): stacking shifted views is far cheaper than copying
        # a 6-D strided window view
        cols = np.stack([xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
                         for i in range(k) for j in range(k)], axis=2)
        cols = cols.reshape(x.shape[0], -1, ho * wo)
        y = np.matmul(w.reshape(self.out_ch, -1), cols) + b[:, None]
        return y.reshape(x.shape[0], self.out_ch, ho, wo), (x.shape, cols)

    def backward(self, ctx, dy, need_dx=True):
        x_shape, cols = ctx
        w = self.params[0]
        k, s, p = self.kernel, self.stride, self.padding
        bsz, _, ho, wo = dy.shape
        d3 = dy.reshape(bsz, self.out_ch, ho * wo)
        dw = np.matmul(d3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        db = d3.sum(axis=(0, 2))
        if not need_dx:
            return [dw, db], None
        dcols = np.matmul(w.reshape(self.out_ch, -1).T, d3)
        dcols = dcols.reshape(bsz, self.in_ch, k, k, ho, wo)
        h, wd = x_shape[2] + 2 * p, x_shape[3] + 2 * p
        dxp = np.zeros((bsz, self.in_ch, h, wd), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, i, j]
        dx = dxp[:, :, p:h - p, p:wd - p] if p else dxp
        return [dw, db], dx


class MaxPool(Layer):
    """Non-overlapping ``size x size`` max pooling; ties go to the first maximum."""

    def __init__(self, size=2):
        self.size = int(size)
        self.params = []

    def spec(self):
        return {"type": "MaxPool", "size": self.size}

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise InvalidInput(f"MaxPool({self.size}) needs dimensions divisible by its size")
        return (c, h // self.size, w // self.size)

    def flops(self, in_shape):
        return int(np.prod(in_shape))

    def forward(self, x):
        s = self.size
        y = x[:, :, 0::s, 0::s]
        for q in range(1, s * s):
            y = np.maximum(y, x[:, :, q // s::s, q % s::s])
        return y, (x, y)

    def backward(self, ctx, dy):
        x, y = ctx
        s = self.size
        dx = np.zeros(x.shape, dtype=dy.dtype)
        taken = np.zeros(y.shape, dtype=bool)
        for q in range(s * s):
            hit = x[:, :, q // s::s, q % s::s] == y
            hit &= ~taken
            taken |= hit
            dx[:, :, q // s::s, q % s::s] = dy * hit
        return [], dx


class ReLU(Layer):
    def __init__(self):
        self.params = []

    def flops(self, in_shape):
        return int(np.prod(in_shape))

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dy):
        return [], dy * mask


class Flatten(Layer):
    def __init__(self):
        self.params = []

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, dy):
        return [], dy.reshape(shape)


class Dense(Layer):
    """Affine map ``x @ W.T + b`` with ``W`` of shape ``(out, in)``."""

    def __init__(self, n_in, n_out, gain=1.0):
        self.n_in, self.n_out, self.gain = int(n_in), int(n_out), float(gain)
        self.params = [np.zeros((self.n_out, self.n_in)), np.zeros(self.n_out)]

    def spec(self):
        out = {"type": "Dense", "n_in": self.n_in, "n_out": self.n_out}
        if self.gain != 1.0:
            out["gain"] = self.gain
        return out

    def init(self, rng, dtype):
        # He-uniform scaled by `gain`; a small gain keeps initial logits near zero
        lim = self.gain * np.sqrt(6.0 / self.n_in)
        self.params = [rng.uniform(-lim, lim, (self.n_out, self.n_in)).astype(dtype),
                       np.zeros(self.n_out, dtype)]

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise InvalidInput(f"Dense expects input ({self.n_in},), got {tuple(in_shape)}")
        return (self.n_out,)

    def flops(self, in_shape):
        return 2 * self.n_in * self.n_out

    def forward(self, x):
        w, b = self.params
        return x @ w.T + b, x

    def backward(self, x, dy):
        w = self.params[0]
        return [dy.T @ x, dy.sum(axis=0)], dy @ w


LAYER_TYPES = {cls.__name__: cls for cls in (Conv2D, MaxPool, ReLU, Flatten, Dense)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type")
    if kind not in LAYER_TYPES:
        raise InvalidInput(f"unknown layer type {kind!r}")
    return LAYER_TYPES[kind](**spec)


@dataclass
class Cache:
    contexts: list
    version: int
    in_shape: tuple


class Network:
    """A chain of layers with a fixed per-sample input shape."""

    def __init__(self, layers, input_shape, dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.version = 0
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.out_shape(self.shapes[-1])))
        for layer in self.layers:
            layer.params = [p.astype(self.dtype) for p in layer.params]

    @property
    def output_shape(self):
        return self.shapes[-1]

    def init(self, rng: np.random.Generator):
        """He-uniform weights, zero biases, drawn layer by layer in order."""
        for layer in self.layers:
            layer.init(rng, self.dtype)
        self.version += 1
        return self

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def flops_per_sample(self) -> int:
        return sum(layer.flops(shape) for layer, shape in zip(self.layers, self.shapes))

    def get_flat(self) -> np.ndarray:
        ps = self.parameters()
        return np.concatenate([p.ravel() for p in ps]) if ps else np.zeros(0, self.dtype)

    def set_flat(self, flat):
        flat = np.asarray(flat)
        if flat.size != self.param_count():
            raise InvalidInput(f"expected {self.param_count()} parameters, got {flat.size}")
        i = 0
        for layer in self.layers:
            new = []
            for p in layer.params:
                new.append(flat[i:i + p.size].reshape(p.shape).astype(self.dtype))
                i += p.size
            layer.params = new
        self.version += 1

    def copy(self) -> "Network":
        clone = Network([layer_from_spec(layer.spec()) for layer in self.layers],
                        self.input_shape, self.dtype)
        clone.set_flat(self.get_flat())
        return clone

    def specs(self):
        return [layer.spec() for layer in self.layers]


def forward(net: Network, x):
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[1:] != net.input_shape:
        raise InvalidInput(f"input shape {x.shape[1:]} does not match {net.input_shape}")
    ctxs = []
    for layer in net.layers:
        x, ctx = layer.forward(x)
        ctxs.append(ctx)
    return x, Cache(ctxs, net.version, net.input_shape)


def backward(net: Network, cache: Cache, upstream, input_grad=True):
    """Parameter gradients (flat, in :meth:`Network.parameters` order) and input gradient.

    With ``input_grad=False`` the returned input gradient is ``None`` and the
    first convolution skips computing it.
    """
    if cache.version != net.version or len(cache.contexts) != len(net.layers):
        raise StaleCache("parameters changed since the forward pass")
    dy = np.asarray(upstream, dtype=net.dtype)
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer, ctx = net.layers[i], cache.contexts[i]
        if i == 0 and not input_grad and isinstance(layer, Conv2D):
            g, dy = layer.backward(ctx, dy, need_dx=False)
        else:
            g, dy = layer.backward(ctx, dy)
        grads = list(g) + grads
    flat = np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0, net.dtype)
    return flat, dy


def sgd_step(params, grads, lr: float) -> np.ndarray:
    params, grads = np.asarray(params), np.asarray(grads)
    if params.shape != grads.shape:
        raise InvalidInput("parameter and gradient vectors differ in length")
    return params - lr * grads


def apply_sgd(net: Network, grads, lr: float):
    net.set_flat(sgd_step(net.get_flat(), grads, lr))


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy, class probabilities and the gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    probs = softmax(logits)
    n = logits.shape[0]
    # log-sum-exp in double so a vanishing probability cannot give log(0)
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    loss = float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(n), labels]))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, probs, grad / n


def train_flops(net: Network, batch: int) -> int:
    """FLOPs of one SGD iteration: backward counted as twice the forward pass."""
    return 3 * batch * net.flops_per_sample()


# default 6-layer CNN; split points index into this list
SPLIT_POINTS = {"A": 7, "B": 9}


# init gain of the classifier head, so an untrained net predicts near-uniformly
HEAD_GAIN = 0.1


def default_layers(in_channels=1, classes=5, hidden=60):
    return [Conv2D(in_channels, 8, 3, padding=1), ReLU(), MaxPool(2),
            Conv2D(8, 16, 3, padding=1), ReLU(), MaxPool(2), Flatten(),
            Dense(784, hidden), ReLU(), Dense(hidden, classes, HEAD_GAIN)]


def full_network(in_channels=1, classes=5, dtype=np.float32) -> Network:
    return Network(default_layers(in_channels, classes), (in_channels, 28, 28), dtype)


def split_networks(split: str, n_views: int = 1, cat: bool = False, classes=5,
                   dtype=np.float32):
    """L-model (one view) and S-model of the default CNN cut at ``split``.

    With ``cat`` the S-model's first layer takes ``n_views`` concatenated
    intermediate vectors.
    """
    if split not in SPLIT_POINTS:
        raise InvalidInput(f"unknown split point {split!r}; use 'A' or 'B'")
    cut = SPLIT_POINTS[split]
    layers = default_layers(1, classes)
    lmodel = Network(layers[:cut], (1, 28, 28), dtype)
    d = lmodel.output_shape[0]
    width = d * n_views if cat else d
    tail = layers[cut:]
    first = tail[0]
    tail[0] = Dense(width, first.n_out, first.gain)
    smodel = Network(tail, (width,), dtype)
    return lmodel, smodel


MAGIC = b"VFNN"
FORMAT_VERSION = 1


def save_network(net: Network, fh):
    """Header (magic, version, JSON layer specs) then float32 little-endian parameters."""
    header = json.dumps({"input_shape": list(net.input_shape), "layers": net.specs()},
                        sort_keys=True).encode()
    fh.write(MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header)
    fh.write(net.get_flat().astype("<f4").tobytes())


def load_network(fh, dtype=np.float32, expect_end=True) -> Network:
    """Read one checkpoint; ``expect_end=False`` allows further data to follow."""
    if fh.read(4) != MAGIC:
        raise InvalidInput("not a network checkpoint")
    version, n = struct.unpack("<HI", fh.read(6))
    if version != FORMAT_VERSION:
        raise InvalidInput(f"unsupported checkpoint version {version}")
    meta = json.loads(fh.read(n))
    net = Network([layer_from_spec(s) for s in meta["layers"]], meta["input_shape"], dtype)
    raw = fh.read(4 * net.param_count())
    if len(raw) != 4 * net.param_count() or (expect_end and fh.read(1)):
        raise InvalidInput("checkpoint payload length does not match its header")
    net.set_flat(np.frombuffer(raw, "<f4"))
    return net


def network_bytes(net: Network) -> bytes:
    buf = io.BytesIO()
    save_network(net, buf)
    return buf.getvalue()
