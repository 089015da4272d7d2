"""Dense float64 numerics: a tanh MLP with handwritten gradients.

Everything here is a pure function of its arguments. The MLP shape is
fixed (affine layers, tanh on hidden layers, identity output), which is
what makes the hand-derived backward pass and the central-difference
oracle practical. Public operations reject non-finite inputs instead of
letting NaNs propagate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError
from .rng import Rng


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def as_matrix(name: str, value) -> np.ndarray:
    """Validate a dense 2-D float64 matrix with finite entries."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return ensure_finite(name, arr)


def as_vector(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return ensure_finite(name, arr)


@dataclass
class MlpLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class MlpParams:
    """Affine layer chain; tanh on hidden layers, identity on the last."""

    layers: list[MlpLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [MlpLayer(l.weight.copy(), l.bias.copy()) for l in self.layers]
        )

    def arrays(self) -> list[np.ndarray]:
        """Live references to every parameter array, in a fixed order."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


@dataclass
class MlpGrads:
    layers: list[MlpLayer]  # same shapes as the parameters

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


def init_mlp(sizes: list[int], rng: Rng) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if len(sizes) < 2:
        raise ShapeError(f"need at least input and output sizes, got {sizes}")
    if any(s < 1 for s in sizes):
        raise ShapeError(f"layer sizes must be positive, got {sizes}")
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = (rng.uniforms(fan_out * fan_in) * 2.0 - 1.0) * bound
        layers.append(MlpLayer(w.reshape(fan_out, fan_in), np.zeros(fan_out)))
    return MlpParams(layers)


def _check_params(params: MlpParams) -> None:
    if not params.layers:
        raise ShapeError("MLP has no layers")
    for i, layer in enumerate(params.layers):
        if layer.weight.ndim != 2 or layer.bias.ndim != 1:
            raise ShapeError(f"layer {i}: weight must be 2-D and bias 1-D")
        if layer.weight.shape[0] != layer.bias.shape[0]:
            raise ShapeError(
                f"layer {i}: weight rows {layer.weight.shape[0]} "
                f"!= bias length {layer.bias.shape[0]}"
            )
        if i > 0:
            prev_out = params.layers[i - 1].weight.shape[0]
            if layer.weight.shape[1] != prev_out:
                raise ShapeError(
                    f"layer {i}: input dim {layer.weight.shape[1]} does not "
                    f"chain from previous output dim {prev_out}"
                )


def forward_batch(params: MlpParams, inputs: np.ndarray):
    """Batched forward pass; returns (outputs, activation cache).

    The cache holds the post-activation value of every layer input, which
    is exactly what the backward pass needs.
    """
    _check_params(params)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batched input must be 2-D, got shape {x.shape}")
    if x.shape[1] != params.in_dim:
        raise ShapeError(
            f"input dim {x.shape[1]} != first-layer input dim {params.in_dim}"
        )
    ensure_finite("mlp input", x)
    cache = [x]
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        x = x @ layer.weight.T + layer.bias
        if i != last:
            x = np.tanh(x)
        cache.append(x)
    return x, cache


def mlp_forward(params: MlpParams, input_vec) -> np.ndarray:
    """Evaluate the MLP on a single input vector."""
    x = as_vector("mlp input", input_vec)
    out, _ = forward_batch(params, x[None, :])
    return out[0]


def backward_batch(params: MlpParams, cache, upstream: np.ndarray):
    """Gradients of sum_b <output_b, upstream_b> w.r.t. params and inputs.

    `cache` comes from forward_batch on the same params. Parameter
    gradients are summed over the batch; the per-sample input gradient is
    returned alongside.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache[-1].shape:
        raise ShapeError(
            f"upstream gradient shape {g.shape} != output shape {cache[-1].shape}"
        )
    ensure_finite("upstream gradient", g)
    grads = [None] * len(params.layers)
    delta = g
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        if i != last:
            # cache[i + 1] is tanh(z_i); tanh'(z) = 1 - tanh(z)^2
            delta = delta * (1.0 - cache[i + 1] ** 2)
        a_prev = cache[i]
        grads[i] = MlpLayer(delta.T @ a_prev, delta.sum(axis=0))
        delta = delta @ params.layers[i].weight
    return MlpGrads(grads), delta


def mlp_backward(params: MlpParams, input_vec, upstream_grad):
    """Exact gradients of <output, upstream_grad> for one input vector."""
    x = as_vector("mlp input", input_vec)
    g = as_vector("upstream gradient", upstream_grad)
    if g.shape[0] != params.out_dim:
        raise ShapeError(
            f"upstream length {g.shape[0]} != output dim {params.out_dim}"
        )
    _, cache = forward_batch(params, x[None, :])
    grads, input_grad = backward_batch(params, cache, g[None, :])
    return grads, input_grad[0]


def finite_diff_grad(loss_fn, params: MlpParams, eps: float) -> MlpGrads:
    """Central-difference gradient of loss_fn(params) per parameter."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    work = params.copy()
    grads = MlpGrads(
        [MlpLayer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in work.layers]
    )
    for arr, out in zip(work.arrays(), grads.arrays()):
        flat = arr.reshape(-1)
        gflat = out.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lo_hi = loss_fn(work)
            flat[k] = orig - eps
            lo_lo = loss_fn(work)
            flat[k] = orig
            g = (lo_hi - lo_lo) / (2.0 * eps)
            if not np.isfinite(g):
                raise NonFiniteError(f"finite difference overflowed at index {k}")
            gflat[k] = g
    return grads


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]


def adam_init(params: MlpParams) -> AdamState:
    arrays = params.arrays()
    return AdamState(
        step=0,
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
    )


def adam_step(
    params: MlpParams,
    grads: MlpGrads,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays):
        raise ShapeError("gradient structure does not match parameters")
    for p, g in zip(p_arrays, g_arrays):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        ensure_finite("gradient", g)
    t = state.step + 1
    new_params = params.copy()
    new_m, new_v = [], []
    for p, g, m, v in zip(new_params.arrays(), g_arrays, state.m, state.v):
        m2 = beta1 * m + (1.0 - beta1) * g
        v2 = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m2 / (1.0 - beta1**t)
        v_hat = v2 / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m.append(m2)
        new_v.append(v2)
    return new_params, AdamState(step=t, m=new_m, v=new_v)
