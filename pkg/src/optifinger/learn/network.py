"""Dense feed-forward networks with batch normalization, written on numpy.

A :class:`Network` is a shared trunk of dense layers followed by one or more
named heads. Every layer is ``activation(bn(x @ W) )`` when batch
normalization is on (the bias is redundant there and omitted) or
``activation(x @ W + b)`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeMismatch",
    "NonFiniteGradient",
    "LayerSpec",
    "DenseLayer",
    "Network",
    "AdamState",
    "adam_step",
    "mse_loss",
    "sigmoid_xent_loss",
    "multitask_network",
    "multitouch_network",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    batch_norm: bool = False
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "identity", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")


class DenseLayer:
    def __init__(self, spec: LayerSpec, rng: np.random.Generator | None = None, dtype=np.float64):
        self.spec = spec
        n_in, n_out = spec.fan_in, spec.fan_out
        rng = rng if rng is not None else np.random.default_rng(0)
        # uniform fan-in scaling: He for ReLU, LeCun otherwise
        limit = math.sqrt((6.0 if spec.activation == "relu" else 3.0) / n_in)
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        if spec.batch_norm:
            self.b = None
            self.gamma = np.ones(n_out, dtype=dtype)
            self.beta = np.zeros(n_out, dtype=dtype)
            self.running_mean = np.zeros(n_out, dtype=dtype)
            self.running_var = np.ones(n_out, dtype=dtype)
        else:
            self.b = np.zeros(n_out, dtype=dtype)
            self.gamma = self.beta = self.running_mean = self.running_var = None
        self._cache = None

    def param_names(self):
        return ["W", "gamma", "beta"] if self.spec.batch_norm else ["W", "b"]

    def params(self):
        return [getattr(self, n) for n in self.param_names()]

    def state_names(self):
        return self.param_names() + (["running_mean", "running_var"] if self.spec.batch_norm else [])

    def astype(self, dtype):
        for name in self.state_names():
            setattr(self, name, getattr(self, name).astype(dtype))
        return self

    def forward(self, x, train: bool):
        if x.shape[-1] != self.spec.fan_in:
            raise ShapeMismatch(f"expected {self.spec.fan_in} inputs, got {x.shape[-1]}")
        z = x @ self.W
        xhat = inv_std = None
        if self.spec.batch_norm:
            if train:
                if x.shape[0] < 2:
                    raise ShapeMismatch("batch normalization needs at least 2 rows in train mode")
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                n = z.shape[0]
                self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mean
                self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * var * n / (n - 1)
            else:
                mean, var = self.running_mean, self.running_var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mean) * inv_std
            pre = xhat * self.gamma + self.beta
        else:
            pre = z + self.b
        act = self.spec.activation
        if act == "relu":
            out = np.maximum(pre, 0)
        elif act == "sigmoid":
            out = _sigmoid(pre)
        else:
            out = pre
        if train:
            self._cache = (x, pre, out, xhat, inv_std)
        return out

    def backward(self, grad_out, wrt_pre: bool = False, need_input_grad: bool = True):
        """Returns ``(grad_input, param_grads)``.

        With ``wrt_pre`` the incoming gradient is already with respect to the
        pre-activation (used for fused sigmoid cross-entropy).
        """
        if self._cache is None:
            raise RuntimeError("backward called before a train-mode forward")
        x, pre, out, xhat, inv_std = self._cache
        if grad_out.shape != out.shape:
            raise ShapeMismatch(f"gradient shape {grad_out.shape} != output shape {out.shape}")
        act = self.spec.activation
        if wrt_pre or act == "identity":
            g = grad_out
        elif act == "relu":
            g = grad_out * (pre > 0)
        else:
            g = grad_out * out * (1 - out)
        if self.spec.batch_norm:
            dgamma = np.sum(g * xhat, axis=0)
            dbeta = np.sum(g, axis=0)
            dxhat = g * self.gamma
            n = g.shape[0]
            dz = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
            grads = [x.T @ dz, dgamma, dbeta]
        else:
            dz = g
            grads = [x.T @ dz, dz.sum(axis=0)]
        dx = dz @ self.W.T if need_input_grad else None
        return dx, grads


class Network:
    """Shared trunk plus named heads.

    ``forward`` returns a dict of head outputs. In ``train`` mode batch
    normalization uses batch statistics and updates running averages; in
    ``infer`` mode it uses the running averages and nothing is mutated.
    """

    def __init__(self, trunk: list[DenseLayer], heads: dict[str, list[DenseLayer]], name: str = "network"):
        self.trunk = list(trunk)
        self.heads = dict(heads)
        self.name = name
        self.mode = "infer"
        self._check_wiring()

    def _check_wiring(self):
        width = self.trunk[0].spec.fan_in if self.trunk else None
        for layer in self.trunk:
            if width is not None and layer.spec.fan_in != width:
                raise ShapeMismatch("trunk layer widths do not chain")
            width = layer.spec.fan_out
        for head, layers in self.heads.items():
            w = width
            for layer in layers:
                if w is not None and layer.spec.fan_in != w:
                    raise ShapeMismatch(f"head {head!r} layer widths do not chain")
                w = layer.spec.fan_out

    @property
    def n_inputs(self) -> int:
        return self.trunk[0].spec.fan_in if self.trunk else next(iter(self.heads.values()))[0].spec.fan_in

    @property
    def dtype(self):
        return self.layers()[0].W.dtype

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "infer"
        return self

    def layers(self) -> list[DenseLayer]:
        out = list(self.trunk)
        for layers in self.heads.values():
            out.extend(layers)
        return out

    def named_layers(self):
        for i, layer in enumerate(self.trunk):
            yield f"trunk.{i}", layer
        for head, layers in self.heads.items():
            for i, layer in enumerate(layers):
                yield f"{head}.{i}", layer

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers() for p in layer.params()]

    def astype(self, dtype):
        for layer in self.layers():
            layer.astype(dtype)
        return self

    def forward(self, x) -> dict:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ShapeMismatch(f"expected batch of shape (B, {self.n_inputs}), got {x.shape}")
        if x.shape[0] == 0:
            raise ShapeMismatch("empty batch")
        x = x.astype(self.dtype, copy=False)
        train = self.mode == "train"
        h = x
        for layer in self.trunk:
            h = layer.forward(h, train)
        out = {}
        for head, layers in self.heads.items():
            y = h
            for layer in layers:
                y = layer.forward(y, train)
            out[head] = y
        return out

    __call__ = forward

    def backward(self, grad_outputs: dict, wrt_pre: frozenset | set = frozenset()) -> list[np.ndarray]:
        """Gradients for ``params()`` given output gradients per head."""
        grads_by_layer = {}
        trunk_grad = None
        for head, layers in self.heads.items():
            if head not in grad_outputs:
                raise ShapeMismatch(f"missing gradient for head {head!r}")
            g = grad_outputs[head]
            fused = head in wrt_pre
            for k in range(len(layers) - 1, -1, -1):
                need = k > 0 or bool(self.trunk)
                g, pg = layers[k].backward(g, wrt_pre=fused and k == len(layers) - 1, need_input_grad=need)
                grads_by_layer[id(layers[k])] = pg
            if self.trunk:
                trunk_grad = g if trunk_grad is None else trunk_grad + g
        for k in range(len(self.trunk) - 1, -1, -1):
            trunk_grad, pg = self.trunk[k].backward(trunk_grad, need_input_grad=k > 0)
            grads_by_layer[id(self.trunk[k])] = pg
        return [g for layer in self.layers() for g in grads_by_layer[id(layer)]]


def _build(specs, rng, dtype):
    return [DenseLayer(s, rng, dtype) for s in specs]


def multitask_network(
    n_inputs: int = 990,
    trunk: tuple = (512, 256, 128),
    head_hidden: tuple = (64, 32),
    outputs: dict | None = None,
    seed: int = 0,
    dtype=np.float64,
) -> Network:
    """Shared BN+ReLU trunk with one BN+ReLU branch per regression output."""
    outputs = outputs or {"location": 2, "force": 1}
    rng = np.random.default_rng(seed)
    specs = []
    width = n_inputs
    for n in trunk:
        specs.append(LayerSpec(width, n, True, "relu"))
        width = n
    trunk_layers = _build(specs, rng, dtype)
    heads = {}
    for head, n_out in outputs.items():
        hs = []
        w = width
        for n in head_hidden:
            hs.append(LayerSpec(w, n, True, "relu"))
            w = n
        hs.append(LayerSpec(w, n_out, False, "identity"))
        heads[head] = _build(hs, rng, dtype)
    return Network(trunk_layers, heads, "multitask")


def multitouch_network(n_inputs: int = 990, hidden: tuple = (128, 32), n_outputs: int = 20, seed: int = 0, dtype=np.float64) -> Network:
    """Plain ReLU network with independent sigmoid outputs."""
    rng = np.random.default_rng(seed)
    specs = []
    width = n_inputs
    for n in hidden:
        specs.append(LayerSpec(width, n, False, "relu"))
        width = n
    specs.append(LayerSpec(width, n_outputs, False, "sigmoid"))
    layers = _build(specs, rng, dtype)
    return Network([], {"cells": layers}, "multitouch")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(pred, target, mask=None):
    """Mean squared error over masked rows and all columns.

    Returns ``(loss, grad_wrt_pred)``; rows outside the mask get zero
    gradient. An empty mask gives zero loss.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    if mask is not None:
        diff = diff * np.asarray(mask, dtype=pred.dtype)[:, None]
        n_rows = int(np.count_nonzero(mask))
    else:
        n_rows = pred.shape[0]
    if n_rows == 0:
        return 0.0, np.zeros_like(pred)
    denom = n_rows * pred.shape[1]
    return float(np.sum(diff * diff) / denom), 2.0 * diff / denom


def sigmoid_xent_loss(logits, target):
    """Sigmoid cross-entropy summed over outputs, averaged over the batch.

    Returns ``(loss, grad_wrt_logits)``; the gradient is (sigmoid(z) - y) / B.
    """
    if logits.shape != target.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs target {target.shape}")
    B = logits.shape[0]
    z = logits
    loss = np.sum(np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))) / B
    return float(loss), (_sigmoid(z) - target) / B


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    _scratch: list = field(default_factory=list, repr=False)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        st = cls(**kw)
        st.m = [np.zeros_like(p) for p in params]
        st.v = [np.zeros_like(p) for p in params]
        return st


def adam_step(params: list, grads: list, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update.

    All arithmetic happens in preallocated buffers; the first layer of the
    multitask net holds half a million weights and this loop runs once per
    minibatch.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter / gradient / state counts differ")
    for g in grads:
        # a sum is non-finite whenever any element is
        if not np.isfinite(np.sum(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    if len(state._scratch) != len(params):
        state._scratch = [np.empty_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v, tmp in zip(params, grads, state.m, state.v, state._scratch):
        if p.shape != g.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        if tmp.dtype != p.dtype or tmp.shape != p.shape:
            tmp = np.empty_like(p)
        m *= b1
        np.multiply(g, 1 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1 - b2
        v += tmp
        # p -= (lr / c1) * m / (sqrt(v / c2) + eps)
        np.multiply(v, 1.0 / c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / c1
        p -= tmp
