"""Minimal dense linear algebra for shallow networks.

Weight matrices are plain float64 numpy arrays (row-major), `DenseLayer`
is an affine map plus a pointwise activation, and gradients are
hand-derived reverse-mode accumulated into a `GradTape`.  `LayerStack`
holds K same-shaped layers in one contiguous block so the per-basis
loops of the bilinear models vectorize; its `layers` property exposes
ordinary `DenseLayer` views into the same memory.

No autodiff graph: every backward pass here is written out explicitly
and checked against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ShapeError

ACTIVATIONS = ("identity", "tanh", "softplus")


def softplus(z):
    # log(1+e^z) via logaddexp, stable for large |z|
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(name, z):
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name, z):
    """d activation / d preactivation, evaluated at preactivation z."""
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "softplus":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """Affine map y = act(W x + b) with W of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError("weights must be 2-D (out, in)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("bias length must equal weights.rows")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


def init_layer(rng: np.random.Generator, out_dim: int, in_dim: int,
               activation: str = "identity") -> DenseLayer:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for weights and bias."""
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return DenseLayer(w, b, activation)


def forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to a vector (in,) or a batch (B, in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"input dim {x.shape[-1]} != layer in_dim {layer.in_dim}")
    z = x @ layer.weights.T + layer.bias
    return _activate(layer.activation, z)


def backward(layer: DenseLayer, x: np.ndarray, upstream: np.ndarray,
             tape: "GradTape") -> np.ndarray:
    """Accumulate dL/dW, dL/db into the tape; return dL/dx.

    `x` is the same input the forward pass saw (the preactivation is
    recomputed, which is cheap for these shallow nets and keeps the call
    stateless).  Handles vector (in,) and batch (B, in) inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"input dim {x.shape[-1]} != layer in_dim {layer.in_dim}")
    if upstream.shape[-1] != layer.out_dim:
        raise ShapeError(
            f"upstream dim {upstream.shape[-1]} != layer out_dim {layer.out_dim}")
    z = x @ layer.weights.T + layer.bias
    d = upstream * _activate_grad(layer.activation, z)
    g = tape.for_params(layer)
    if x.ndim == 1:
        g.weights += np.outer(d, x)
        g.bias += d
    else:
        g.weights += d.T @ x
        g.bias += d.sum(axis=0)
    return d @ layer.weights


@dataclass
class LayerStack:
    """K same-shaped affine layers stored contiguously.

    weights has shape (K, out, in) and bias (K, out).  All layers share
    one activation.  Each element of `layers` is a DenseLayer whose
    arrays are views into this block, so mutating either side is seen by
    both.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.weights.ndim != 3 or self.bias.shape != self.weights.shape[:2]:
            raise ShapeError("stack weights must be (K, out, in), bias (K, out)")

    @property
    def n_layers(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[2]

    @property
    def layers(self) -> list[DenseLayer]:
        return [DenseLayer(self.weights[k], self.bias[k], self.activation)
                for k in range(self.n_layers)]


def init_stack(rng: np.random.Generator, k: int, out_dim: int, in_dim: int,
               activation: str = "identity") -> LayerStack:
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(k, out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=(k, out_dim))
    return LayerStack(w, b, activation)


def stack_forward(stack: LayerStack, x: np.ndarray) -> np.ndarray:
    """All K layers applied to x: (in,) -> (K, out) or (B, in) -> (B, K, out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stack.in_dim:
        raise ShapeError(
            f"input dim {x.shape[-1]} != stack in_dim {stack.in_dim}")
    k, out, i = stack.weights.shape
    # contiguous (in, K*out) copy keeps the product on the fast GEMM path
    wt = np.ascontiguousarray(stack.weights.reshape(k * out, i).T)
    if x.ndim == 1:
        z = (x @ wt).reshape(k, out) + stack.bias
    else:
        z = (x @ wt).reshape(len(x), k, out) + stack.bias
    return _activate(stack.activation, z)


def stack_backward(stack: LayerStack, x: np.ndarray, upstream: np.ndarray,
                   tape: "GradTape") -> np.ndarray:
    """Backward through all K layers at once.

    upstream has shape (B, K, out); the returned input gradient (B, in)
    is summed over the K layers since they all read the same input.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    k, out, i = stack.weights.shape
    if stack.activation == "identity":
        d = upstream
    else:
        wt = np.ascontiguousarray(stack.weights.reshape(k * out, i).T)
        z = (x @ wt).reshape(len(x), k, out) + stack.bias
        d = upstream * _activate_grad(stack.activation, z)
    dflat = d.reshape(len(x), k * out)
    g = tape.for_params(stack)
    g.weights += (dflat.T @ x).reshape(k, out, i)
    g.bias += d.sum(axis=0)
    return dflat @ stack.weights.reshape(k * out, i)


@dataclass
class ParamGrad:
    weights: np.ndarray
    bias: np.ndarray


class GradTape:
    """Gradient buffers keyed by the layer/stack object they belong to.

    Buffers are zeroed on creation and on `zero()`; `backward` and
    `stack_backward` accumulate into them, so repeated calls without a
    `zero()` sum gradients on purpose.
    """

    def __init__(self):
        self._grads: dict[int, ParamGrad] = {}
        self._owners: dict[int, object] = {}

    def for_params(self, obj) -> ParamGrad:
        g = self._grads.get(id(obj))
        if g is None:
            g = ParamGrad(np.zeros_like(obj.weights), np.zeros_like(obj.bias))
            self._grads[id(obj)] = g
            self._owners[id(obj)] = obj  # keep alive so id() stays unique
        return g

    def zero(self):
        for g in self._grads.values():
            g.weights[:] = 0.0
            g.bias[:] = 0.0


@dataclass
class AdamState:
    """Bias-corrected Adam over a fixed, ordered list of parameter arrays.

    Moment buffers are allocated on first use and keep the shape of the
    parameters they track; `step_count` increments exactly once per
    `adam_step` call.
    """

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must be in (0,1)")


def adam_step(params: list, grads: list, state: AdamState,
              names: list | None = None) -> None:
    """One Adam update, applied to `params` in place.

    `params` and `grads` are parallel lists of arrays; the same list
    order must be used for a given state across calls.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"param/grad shape mismatch at index {i}")
        if not np.all(np.isfinite(g)):
            where = names[i] if names else f"param[{i}]"
            raise NumericsError(f"non-finite gradient for {where}")
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def check_gradient(f, params: list, grads: list, h: float = 1e-5) -> float:
    """Max relative error between `grads` and central finite differences.

    `f` is a zero-argument scalar function that reads the arrays in
    `params` (they are perturbed in place and restored).  The relative
    error denominator is max(1, |fd|) so near-zero gradients do not blow
    up the ratio.
    """
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(f())
            flat[j] = orig - h
            f_minus = float(f())
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError("non-finite loss during gradient check")
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(gflat[j] - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return worst
