"""Layer stacks described by plain data.

A network is a list of layer dicts, e.g.::

    [{"type": "conv2d", "filters": 32, "kernel": [5, 5], "stride": [2, 2],
      "activation": "leaky_relu", "alpha": 0.2},
     {"type": "flatten"},
     {"type": "dense", "units": 1}]

so alternate architectures can be configured without code changes.
"""
from __future__ import annotations

import copy
import math
from typing import Any

import numpy as np

from . import functional as F
from .conv import conv2d, conv2d_transpose
from .optim import Parameter
from .tensor import DimensionError, Tensor, grad, reshape, sqrt, sum_, mul

RELU_LIKE = {"relu", "leaky_relu"}


class UnsupportedLayerError(TypeError):
    """A layer cannot take part in double backpropagation."""


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int, act: str | None, dtype):
    if act in RELU_LIKE:
        limit = math.sqrt(6.0 / fan_in)
    else:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"
    double_backprop = True

    def __init__(self, spec: dict):
        self.spec = spec
        self.params: list[Parameter] = []

    def build(self, in_shape: tuple[int, ...], rng, dtype, init_act) -> tuple[int, ...]:
        return in_shape

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        raise NotImplementedError

    def buffers(self) -> list[np.ndarray]:
        return []


def _act(x: Tensor, spec: dict) -> Tensor:
    return F.activation(x, spec.get("activation", "linear"), spec.get("alpha", 0.2))


class Conv2D(Layer):
    kind = "conv2d"

    def build(self, in_shape, rng, dtype, init_act):
        h, w, cin = in_shape
        kh, kw = self.spec.get("kernel", (3, 3))
        cout = self.spec["filters"]
        self.stride = tuple(self.spec.get("stride", (1, 1)))
        self.padding = self.spec.get("padding", "same")
        k = _uniform_init(rng, (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout, init_act, dtype)
        self.kernel = Parameter(k, name=f"{self.spec['name']}.kernel")
        self.bias = Parameter(np.zeros(cout, dtype=dtype), name=f"{self.spec['name']}.bias")
        self.params = [self.kernel, self.bias]
        if self.padding == "same":
            return (math.ceil(h / self.stride[0]), math.ceil(w / self.stride[1]), cout)
        return ((h - kh) // self.stride[0] + 1, (w - kw) // self.stride[1] + 1, cout)

    def __call__(self, x, training, rng):
        return _act(conv2d(x, self.kernel, self.stride, self.padding) + self.bias, self.spec)


class Conv2DTranspose(Layer):
    kind = "conv2d_transpose"

    def build(self, in_shape, rng, dtype, init_act):
        h, w, cin = in_shape
        kh, kw = self.spec.get("kernel", (3, 3))
        cout = self.spec["filters"]
        self.stride = tuple(self.spec.get("stride", (2, 2)))
        k = _uniform_init(rng, (kh, kw, cout, cin), kh * kw * cin, kh * kw * cout, init_act, dtype)
        self.kernel = Parameter(k, name=f"{self.spec['name']}.kernel")
        self.bias = Parameter(np.zeros(cout, dtype=dtype), name=f"{self.spec['name']}.bias")
        self.params = [self.kernel, self.bias]
        return (h * self.stride[0], w * self.stride[1], cout)

    def __call__(self, x, training, rng):
        return _act(conv2d_transpose(x, self.kernel, self.stride) + self.bias, self.spec)


class UpsampleConv(Layer):
    """Nearest-neighbour upsampling followed by a stride-1 same convolution."""

    kind = "upsample_conv"

    def build(self, in_shape, rng, dtype, init_act):
        h, w, cin = in_shape
        kh, kw = self.spec.get("kernel", (3, 3))
        cout = self.spec["filters"]
        self.factor = tuple(self.spec.get("stride", (2, 2)))
        k = _uniform_init(rng, (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout, init_act, dtype)
        self.kernel = Parameter(k, name=f"{self.spec['name']}.kernel")
        self.bias = Parameter(np.zeros(cout, dtype=dtype), name=f"{self.spec['name']}.bias")
        self.params = [self.kernel, self.bias]
        return (h * self.factor[0], w * self.factor[1], cout)

    def __call__(self, x, training, rng):
        up = F.upsample_nearest(x, self.factor)
        return _act(conv2d(up, self.kernel, (1, 1), "same") + self.bias, self.spec)


class Dense(Layer):
    kind = "dense"

    def build(self, in_shape, rng, dtype, init_act):
        if len(in_shape) != 1:
            raise DimensionError(f"dense layer needs flat input, got {in_shape}")
        din, dout = in_shape[0], self.spec["units"]
        w = _uniform_init(rng, (din, dout), din, dout, init_act, dtype)
        self.weight = Parameter(w, name=f"{self.spec['name']}.weight")
        self.bias = Parameter(np.zeros(dout, dtype=dtype), name=f"{self.spec['name']}.bias")
        self.params = [self.weight, self.bias]
        return (dout,)

    def __call__(self, x, training, rng):
        return _act(F.dense(x, self.weight, self.bias), self.spec)


class Activation(Layer):
    kind = "activation"

    def __call__(self, x, training, rng):
        return F.activation(x, self.spec["activation"], self.spec.get("alpha", 0.2))


class BatchNorm(Layer):
    kind = "batch_norm"
    # train-mode statistics couple the samples of a batch, so per-sample input
    # gradients are not defined
    double_backprop = False

    def build(self, in_shape, rng, dtype, init_act):
        c = in_shape[-1]
        self.eps = self.spec.get("eps", 1e-5)
        self.momentum = self.spec.get("momentum", 0.99)
        self.gamma = Parameter(np.ones(c, dtype=dtype), name=f"{self.spec['name']}.gamma")
        self.beta = Parameter(np.zeros(c, dtype=dtype), name=f"{self.spec['name']}.beta")
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.params = [self.gamma, self.beta]
        return in_shape

    def __call__(self, x, training, rng):
        if training:
            out, mu, var = F.batch_norm(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean[:] = m * self.running_mean + (1 - m) * mu
            self.running_var[:] = m * self.running_var + (1 - m) * var
            return out
        return F.batch_norm_eval(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)

    def buffers(self):
        return [self.running_mean, self.running_var]


class Dropout(Layer):
    kind = "dropout"

    def build(self, in_shape, rng, dtype, init_act):
        self.rate = float(self.spec.get("rate", 0.0))
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        return in_shape

    def __call__(self, x, training, rng):
        return F.dropout(x, self.rate, training, rng)


class MaxPool(Layer):
    kind = "max_pool"

    def build(self, in_shape, rng, dtype, init_act):
        self.size = self.spec.get("size", 2)
        h, w, c = in_shape
        return (h // self.size, w // self.size, c)

    def __call__(self, x, training, rng):
        return F.max_pool2d(x, self.size)


class Flatten(Layer):
    kind = "flatten"

    def build(self, in_shape, rng, dtype, init_act):
        return (int(np.prod(in_shape)),)

    def __call__(self, x, training, rng):
        return F.flatten(x)


class Reshape(Layer):
    kind = "reshape"

    def build(self, in_shape, rng, dtype, init_act):
        target = tuple(self.spec["shape"])
        if int(np.prod(target)) != int(np.prod(in_shape)):
            raise DimensionError(f"reshape {in_shape} -> {target} changes element count")
        return target

    def __call__(self, x, training, rng):
        return reshape(x, (x.shape[0],) + tuple(self.spec["shape"]))


LAYER_TYPES: dict[str, type[Layer]] = {
    cls.kind: cls
    for cls in (Conv2D, Conv2DTranspose, UpsampleConv, Dense, Activation, BatchNorm, Dropout, MaxPool, Flatten, Reshape)
}
PARAMETRIC = {"conv2d", "conv2d_transpose", "upsample_conv", "dense"}


def _init_activation(specs: list[dict], i: int) -> str | None:
    """Activation that follows parametric layer ``i`` (its own, or the next activation layer)."""
    if "activation" in specs[i]:
        return specs[i]["activation"]
    for s in specs[i + 1:]:
        if s["type"] in PARAMETRIC:
            return None
        if s["type"] == "activation":
            return s["activation"]
    return None


class Network:
    """A sequential stack of layers with shape inference and seeded initialisation."""

    def __init__(self, layers: list[dict], input_shape, seed: int = 0, dtype=np.float32, name: str = "net"):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        specs = []
        for i, raw in enumerate(layers):
            s = copy.deepcopy(raw)
            s.setdefault("name", f"{name}.{i}.{s['type']}")
            specs.append(s)
        self.specs = specs
        rng = np.random.default_rng(self.seed)
        self.layers: list[Layer] = []
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for i, s in enumerate(specs):
            try:
                cls = LAYER_TYPES[s["type"]]
            except KeyError:
                raise ValueError(f"unknown layer type {s['type']!r}") from None
            layer = cls(s)
            shape = tuple(layer.build(shape, rng, self.dtype, _init_activation(specs, i)))
            self.layers.append(layer)
            self.shapes.append(shape)
        self.output_shape = shape

    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return self.forward(x, training, rng)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(f"{self.name}: expected input (N, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer(x, training, rng)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params]

    def buffers(self) -> list[np.ndarray]:
        return [b for layer in self.layers for b in layer.buffers()]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def descriptor(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "dtype": self.dtype.str,
            "layers": self.specs,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> Network:
        return cls(desc["layers"], desc["input_shape"], desc["seed"], np.dtype(desc["dtype"]), desc["name"])


def input_gradient_norm(network: Network, x_hat, eps: float = 1e-12) -> Tensor:
    """Per-sample L2 norm of d(network)/d(input) at ``x_hat``, differentiable in the weights.

    Dropout is bypassed: the norm is taken of the deterministic network function.
    """
    for layer in network.layers:
        if not layer.double_backprop:
            raise UnsupportedLayerError(
                f"layer {layer.spec['name']} ({layer.kind}) does not support double backpropagation"
            )
    data = x_hat.data if isinstance(x_hat, Tensor) else np.asarray(x_hat, dtype=network.dtype)
    xt = Tensor(data, requires_grad=True)
    out = network.forward(xt, training=False)
    (g,) = grad(sum_(out), [xt], create_graph=True)
    axes = tuple(range(1, g.ndim))
    return sqrt(sum_(mul(g, g), axes) + eps)
