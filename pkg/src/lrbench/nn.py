"""Minimal deterministic neural-network substrate.

Dense and small convolutional layers with hand-derived gradients, softmax
cross-entropy (plus an MSE mode for quadratic fixtures), and SGD with momentum
and coupled L2 weight decay. Everything runs on numpy in float32 or float64;
float64 exists so gradient checks have headroom, benchmarks run float32.

A Model instance is single-owner while training: forward/backward/sgd_step
mutate its gradient and parameter buffers in place.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "Dense",
    "Conv2d",
    "ReLU",
    "MaxPool2",
    "Flatten",
    "Model",
    "ShapeError",
    "NonFiniteLossError",
    "forward",
    "backward",
    "sgd_step",
    "train_step",
    "softmax_cross_entropy",
    "build_mlp",
    "build_cnn",
    "DTYPES",
]

DTYPES = {"f32": np.float32, "f64": np.float64}

GROUP_ORDER = ("initial", "mid", "final")


class ShapeError(ValueError):
    """Input or parameter shapes do not line up."""


class NonFiniteLossError(FloatingPointError):
    """Loss evaluated to nan or inf; carries the offending value."""

    def __init__(self, value: float):
        super().__init__(f"non-finite loss value {value}")
        self.value = float(value)


class Layer:
    """Base layer. Parameterized subclasses expose parallel lists of
    parameter, gradient, and velocity arrays."""

    group: str | None = None
    frozen: bool = False
    name: str = ""

    @property
    def params(self) -> list[np.ndarray]:
        return []

    @property
    def grads(self) -> list[np.ndarray]:
        return []

    @property
    def vel(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, cache):
        raise NotImplementedError

    def zero_grads(self) -> None:
        for g in self.grads:
            g[...] = 0.0


class Dense(Layer):
    """Affine layer, input (n, in_dim) -> output (n, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, bias: bool = True,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = math.sqrt(2.0 / in_dim)
        self.W = (rng.standard_normal((in_dim, out_dim)) * scale).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype) if bias else None
        self._grads = [np.zeros_like(p) for p in self._param_list()]
        self._vel = [np.zeros_like(p) for p in self._param_list()]

    def _param_list(self):
        return [self.W] if self.b is None else [self.W, self.b]

    @property
    def params(self):
        return self._param_list()

    @property
    def grads(self):
        return self._grads

    @property
    def vel(self):
        return self._vel

    def forward(self, x):
        if x.ndim != 2:
            raise ShapeError(f"{self.name or 'dense'}: expected 2-D input, got shape {x.shape}")
        if x.shape[1] != self.W.shape[0]:
            raise ShapeError(
                f"{self.name or 'dense'}: input width {x.shape[1]} != {self.W.shape[0]}"
            )
        y = x @ self.W
        if self.b is not None:
            y = y + self.b
        return y, x

    def backward(self, grad_out, cache):
        x = cache
        if self.frozen:
            self.zero_grads()
        else:
            self._grads[0][...] = x.T @ grad_out
            if self.b is not None:
                self._grads[1][...] = grad_out.sum(axis=0)
        return grad_out @ self.W.T


class Conv2d(Layer):
    """3x3-style convolution, stride 1, zero padding that preserves H and W."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int = 3,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.ksize = ksize
        self.pad = ksize // 2
        scale = math.sqrt(2.0 / (in_ch * ksize * ksize))
        self.W = (rng.standard_normal((out_ch, in_ch, ksize, ksize)) * scale).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self._grads = [np.zeros_like(self.W), np.zeros_like(self.b)]
        self._vel = [np.zeros_like(self.W), np.zeros_like(self.b)]

    @property
    def params(self):
        return [self.W, self.b]

    @property
    def grads(self):
        return self._grads

    @property
    def vel(self):
        return self._vel

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"{self.name or 'conv'}: expected 4-D input, got shape {x.shape}")
        if x.shape[1] != self.W.shape[1]:
            raise ShapeError(
                f"{self.name or 'conv'}: {x.shape[1]} channels != expected {self.W.shape[1]}"
            )
        n, _, h, w = x.shape
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        y = np.zeros((n, self.W.shape[0], h, w), dtype=x.dtype)
        for di in range(self.ksize):
            for dj in range(self.ksize):
                xs = xp[:, :, di:di + h, dj:dj + w]
                y += np.einsum("nchw,oc->nohw", xs, self.W[:, :, di, dj])
        y += self.b[None, :, None, None]
        return y, xp

    def backward(self, grad_out, cache):
        xp = cache
        n, _, h, w = grad_out.shape
        p = self.ksize // 2
        if self.frozen:
            self.zero_grads()
        else:
            for di in range(self.ksize):
                for dj in range(self.ksize):
                    xs = xp[:, :, di:di + h, dj:dj + w]
                    self._grads[0][:, :, di, dj] = np.einsum("nohw,nchw->oc", grad_out, xs)
            self._grads[1][...] = grad_out.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        for di in range(self.ksize):
            for dj in range(self.ksize):
                gxp[:, :, di:di + h, dj:dj + w] += np.einsum(
                    "nohw,oc->nchw", grad_out, self.W[:, :, di, dj]
                )
        return gxp[:, :, p:p + h, p:p + w]


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad_out, cache):
        return grad_out * cache


class MaxPool2(Layer):
    """2x2 max pooling with stride 2. Requires even spatial dims."""

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"{self.name or 'pool'}: expected 4-D input, got shape {x.shape}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name or 'pool'}: spatial dims must be even, got {h}x{w}")
        xr = (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        argmax = xr.argmax(axis=-1)
        y = np.take_along_axis(xr, argmax[..., None], axis=-1)[..., 0]
        return y, (argmax, x.shape)

    def backward(self, grad_out, cache):
        argmax, (n, c, h, w) = cache
        g4 = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
        np.put_along_axis(g4, argmax[..., None], grad_out[..., None], axis=-1)
        return (
            g4.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class Flatten(Layer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache)


class Model:
    """Ordered layer stack with a loss attached.

    ``loss`` is "softmax_ce" for classification (integer labels) or "mse" for
    regression-style fixtures (float targets of the logits' shape).
    ``designated_head`` marks models whose last parameterized layer is a
    classifier head, which default partitioning keeps alone in its group.
    """

    def __init__(self, layers: Sequence[Layer], dtype=np.float32,
                 loss: str = "softmax_ce", designated_head: bool = False):
        if loss not in ("softmax_ce", "mse"):
            raise ValueError(f"unknown loss {loss!r}")
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self.loss = loss
        self.designated_head = designated_head
        for i, layer in enumerate(self.layers):
            if not layer.name:
                layer.name = f"{type(layer).__name__.lower()}{i}"

    def param_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.params]

    def n_params(self) -> int:
        return sum(p.size for l in self.param_layers() for p in l.params)

    def clone_state(self):
        """Bit-exact snapshot of parameters and velocities."""
        return [
            ([p.copy() for p in l.params], [v.copy() for v in l.vel])
            for l in self.param_layers()
        ]

    def load_state(self, state) -> None:
        layers = self.param_layers()
        if len(state) != len(layers):
            raise ShapeError("state does not match this model's layer structure")
        for layer, (params, vels) in zip(layers, state):
            for p, saved in zip(layer.params, params):
                p[...] = saved
            for v, saved in zip(layer.vel, vels):
                v[...] = saved

    def zero_velocity(self) -> None:
        for layer in self.param_layers():
            for v in layer.vel:
                v[...] = 0.0


def forward(model: Model, batch: np.ndarray):
    """Run the batch through all layers; returns (logits, caches) where the
    caches hold whatever each layer needs for its backward pass."""
    x = np.asarray(batch, dtype=model.dtype)
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"logits {logits.shape} and labels {labels.shape} do not match"
        )
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ShapeError("label ids out of range for the logits width")
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def _loss_and_grad(model: Model, logits: np.ndarray, labels: np.ndarray):
    n = logits.shape[0]
    if model.loss == "softmax_ce":
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ShapeError("label ids out of range for the logits width")
        logp = _log_softmax(logits)
        loss = float(-logp[np.arange(n), labels].mean())
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        grad /= n
    else:
        targets = np.asarray(labels, dtype=logits.dtype)
        if targets.shape != logits.shape:
            raise ShapeError(
                f"mse targets {targets.shape} must match logits {logits.shape}"
            )
        diff = logits - targets
        loss = float(0.5 * np.sum(diff * diff) / n)
        grad = diff / n
    return loss, grad.astype(model.dtype, copy=False)


def backward(model: Model, logits: np.ndarray, labels: np.ndarray, caches,
             weight_decay: float = 0.0) -> float:
    """Fill every layer's gradients with the exact gradient of
    mean loss + (weight_decay/2) * ||unfrozen params||^2; returns that value.

    Frozen layers end up with all-zero gradients. When a training loop applies
    weight decay here it must not apply it again in sgd_step.
    """
    loss, grad = _loss_and_grad(model, logits, labels)
    if not math.isfinite(loss):
        raise NonFiniteLossError(loss)

    for layer in model.layers:
        layer.zero_grads()
    # backprop only as far down as the earliest unfrozen parameterized layer
    lowest = None
    for i, layer in enumerate(model.layers):
        if layer.params and not layer.frozen:
            lowest = i
            break
    if lowest is not None:
        for i in range(len(model.layers) - 1, lowest - 1, -1):
            grad = model.layers[i].backward(grad, caches[i])

    if weight_decay:
        for layer in model.layers:
            if not layer.params or layer.frozen:
                continue
            for p, g in zip(layer.params, layer.grads):
                loss += 0.5 * weight_decay * float(np.sum(p.astype(np.float64) ** 2))
                g += weight_decay * p
    return loss


def _group_lr(lr, layer: Layer) -> float:
    if isinstance(lr, (int, float, np.floating)):
        return float(lr)
    if hasattr(lr, "initial"):  # LayerGroupRates-shaped object
        lr = {"initial": lr.initial, "mid": lr.mid, "final": lr.final}
    elif isinstance(lr, (tuple, list)):
        if len(lr) != 3:
            raise ValueError(f"per-group rates need 3 entries, got {len(lr)}")
        lr = dict(zip(GROUP_ORDER, lr))
    if layer.group is None:
        raise ValueError(
            f"layer {layer.name} has no group tag; partition the model before "
            "using per-group rates"
        )
    try:
        return float(lr[layer.group])
    except KeyError:
        raise ValueError(f"no rate given for group {layer.group!r}") from None


def sgd_step(model: Model, lr, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """One SGD-with-momentum update: v <- momentum*v + (g + weight_decay*p),
    p <- p - lr*v, skipping frozen layers.

    ``lr`` is a scalar, a (initial, mid, final) triple, a group->rate dict, or
    an object with .initial/.mid/.final. Weight decay is coupled (added to the
    gradient); pass it either here or to backward, not both.
    """
    for layer in model.param_layers():
        if layer.frozen:
            continue
        step_lr = _group_lr(lr, layer)
        for p, g, v in zip(layer.params, layer.grads, layer.vel):
            eff = g + weight_decay * p if weight_decay else g
            v *= momentum
            v += eff
            p -= step_lr * v


def train_step(model: Model, xb: np.ndarray, yb: np.ndarray, lr,
               momentum: float = 0.0, weight_decay: float = 0.0) -> float:
    """forward + backward + sgd_step on one mini-batch; returns the data loss."""
    logits, caches = forward(model, xb)
    loss = backward(model, logits, yb, caches)
    sgd_step(model, lr, momentum=momentum, weight_decay=weight_decay)
    return loss


def build_mlp(input_shape, n_classes: int, hidden=(64, 64),
              dtype=np.float32, seed: int = 0) -> Model:
    """Flatten -> (Dense+ReLU)* -> Dense classifier head."""
    rng = np.random.default_rng(seed)
    in_dim = int(np.prod(input_shape))
    layers: list[Layer] = [Flatten()]
    width = in_dim
    for h in hidden:
        layers.append(Dense(width, h, dtype=dtype, rng=rng))
        layers.append(ReLU())
        width = h
    head = Dense(width, n_classes, dtype=dtype, rng=rng)
    head.W *= 0.1  # small head keeps the initial loss near ln(n_classes)
    layers.append(head)
    return Model(layers, dtype=dtype, designated_head=True)


def build_cnn(input_shape, n_classes: int, dtype=np.float32, seed: int = 0) -> Model:
    """Two conv blocks with pooling, then two dense layers."""
    c, h, w = input_shape
    if h % 4 or w % 4:
        raise ShapeError(f"cnn input dims must be divisible by 4, got {h}x{w}")
    rng = np.random.default_rng(seed)
    flat = 16 * (h // 4) * (w // 4)
    layers: list[Layer] = [
        Conv2d(c, 8, 3, dtype=dtype, rng=rng),
        ReLU(),
        MaxPool2(),
        Conv2d(8, 16, 3, dtype=dtype, rng=rng),
        ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(flat, 32, dtype=dtype, rng=rng),
        ReLU(),
        Dense(32, n_classes, dtype=dtype, rng=rng),
    ]
    layers[-1].W *= 0.1  # small head keeps the initial loss near ln(n_classes)
    return Model(layers, dtype=dtype, designated_head=True)
