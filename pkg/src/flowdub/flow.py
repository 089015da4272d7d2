"""Optimal-transport conditional flow matching.

The probability path interpolates a standard-normal draw x0 toward a data
point target along (1-(1-sigma_min)t)*x0 + t*target, whose velocity field
is constant in t: target - (1-sigma_min)*x0. A small MLP regresses that
field from [x_t ; t ; condition] rows, and sampling integrates the learned
field with fixed-step forward Euler from t=0 to t=1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, NonFiniteError, ShapeError
from .rng import Rng
from .tensorio import load_tensor, save_tensor


@dataclass
class OtCfmConfig:
    sigma_min: float = 1e-4
    n_euler_steps: int = 10

    def __post_init__(self):
        if not (0.0 <= self.sigma_min < 1.0):
            raise ValueError(f"sigma_min must be in [0, 1), got {self.sigma_min}")
        if self.n_euler_steps < 1:
            raise ValueError(f"n_euler_steps must be >= 1, got {self.n_euler_steps}")


@dataclass
class FlowSamplePath:
    """ODE trajectory: strictly increasing times from 0 to 1 with states."""

    times: list[float]
    states: list[np.ndarray]


@dataclass
class VectorFieldNet:
    """MLP velocity field over rows of [x ; t ; condition]."""

    params: nn.MlpParams
    x_dim: int
    cond_dim: int

    def __post_init__(self):
        expected = self.x_dim + 1 + self.cond_dim
        if self.params.in_dim != expected:
            raise ShapeError(
                f"net input dim {self.params.in_dim} != x_dim + 1 + cond_dim "
                f"= {expected}"
            )
        if self.params.out_dim != self.x_dim:
            raise ShapeError(
                f"net output dim {self.params.out_dim} != x_dim {self.x_dim}"
            )

    def evaluate(self, x: np.ndarray, t: float, mu: np.ndarray) -> np.ndarray:
        out, _ = nn.forward_batch(self.params, _net_inputs(self, x, t, mu))
        return out


def init_vector_field(
    x_dim: int, cond_dim: int, hidden: list[int], rng: Rng
) -> VectorFieldNet:
    sizes = [x_dim + 1 + cond_dim, *hidden, x_dim]
    return VectorFieldNet(nn.init_mlp(sizes, rng), x_dim, cond_dim)


def _net_inputs(net: VectorFieldNet, x: np.ndarray, t, mu: np.ndarray) -> np.ndarray:
    x = nn.as_matrix("state", x)
    mu = nn.as_matrix("condition", mu) if net.cond_dim else np.zeros((x.shape[0], 0))
    if x.shape[1] != net.x_dim:
        raise ShapeError(f"state width {x.shape[1]} != net x_dim {net.x_dim}")
    if mu.shape != (x.shape[0], net.cond_dim):
        raise ShapeError(
            f"condition shape {mu.shape} != ({x.shape[0]}, {net.cond_dim})"
        )
    t_col = np.full((x.shape[0], 1), float(t))
    return np.hstack([x, t_col, mu])


def ot_flow_point(x0, target, t: float, sigma_min: float) -> np.ndarray:
    """Point on the conditional path at time t.

    The x0 coefficient is computed as (1-t) + sigma_min*t, algebraically
    equal to 1-(1-sigma_min)t but exact at both endpoints.
    """
    x0 = nn.as_matrix("x0", x0)
    target = nn.as_matrix("target", target)
    if x0.shape != target.shape:
        raise ShapeError(f"x0 shape {x0.shape} != target shape {target.shape}")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must be in [0, 1], got {t}")
    if not (0.0 <= sigma_min < 1.0):
        raise ValueError(f"sigma_min must be in [0, 1), got {sigma_min}")
    coeff = (1.0 - t) + sigma_min * t
    return coeff * x0 + t * target


def ot_target_field(x0, target, sigma_min: float) -> np.ndarray:
    """Constant velocity of the conditional path: target - (1-sigma_min)*x0."""
    x0 = nn.as_matrix("x0", x0)
    target = nn.as_matrix("target", target)
    if x0.shape != target.shape:
        raise ShapeError(f"x0 shape {x0.shape} != target shape {target.shape}")
    if not (0.0 <= sigma_min < 1.0):
        raise ValueError(f"sigma_min must be in [0, 1), got {sigma_min}")
    return target - (1.0 - sigma_min) * x0


@dataclass
class FlowBatch:
    """Per-row training samples: noise draw, data target, time, condition."""

    x0: np.ndarray  # (B, x_dim)
    target: np.ndarray  # (B, x_dim)
    t: np.ndarray  # (B,)
    mu: np.ndarray  # (B, cond_dim), cond_dim may be 0


def cfm_loss(net: VectorFieldNet, batch: FlowBatch, sigma_min: float):
    """Mean squared field-regression error and its parameter gradients.

    Per sample the loss is the squared Euclidean norm of
    (prediction - target field); the batch reduces by mean.
    """
    x0 = nn.as_matrix("x0", batch.x0)
    target = nn.as_matrix("target", batch.target)
    t = nn.as_vector("t", batch.t)
    b = x0.shape[0]
    if b == 0:
        raise ShapeError("empty batch")
    if target.shape != x0.shape or t.shape[0] != b:
        raise ShapeError(
            f"batch shapes disagree: x0 {x0.shape}, target {target.shape}, "
            f"t {t.shape}"
        )
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("t values must lie in [0, 1]")
    coeff = (1.0 - t) + sigma_min * t
    x_t = coeff[:, None] * x0 + t[:, None] * target
    u = target - (1.0 - sigma_min) * x0
    inputs = np.hstack(
        [x_t, t[:, None], nn.as_matrix("mu", batch.mu) if net.cond_dim else
         np.zeros((b, 0))]
    )
    if inputs.shape[1] != net.params.in_dim:
        raise ShapeError(
            f"assembled input width {inputs.shape[1]} != net input dim "
            f"{net.params.in_dim}"
        )
    v, cache = nn.forward_batch(net.params, inputs)
    diff = v - u
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    grads, _ = nn.backward_batch(net.params, cache, (2.0 / b) * diff)
    return loss, grads


@dataclass
class TrainConfig:
    sigma_min: float = 1e-4
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cond_drop: float = 0.1  # chance of swapping in the unconditional stream


def apply_condition_drop(rng: Rng, mu, mu_uncond, drop_prob: float) -> np.ndarray:
    """Swap rows of mu for their unconditional twin with the given chance.

    No random words are consumed when dropping is disabled or there is no
    unconditional stream, which keeps training streams comparable.
    """
    if mu_uncond is None or drop_prob <= 0.0:
        return mu
    drop = rng.uniforms(mu.shape[0]) < drop_prob
    return np.where(drop[:, None], mu_uncond, mu)


def train_flow(
    net: VectorFieldNet,
    dataset_sampler,
    cond_provider,
    config: TrainConfig,
    steps: int,
    seed: int,
):
    """Stochastic minimization of the field-regression loss.

    dataset_sampler(rng, count) returns a (count, x_dim) batch of data
    targets. cond_provider(rng, targets) returns (mu, mu_uncond) where
    mu_uncond may be None; when present, each sample's condition is
    replaced by its unconditional twin with probability config.cond_drop.
    Deterministic given the seed. Returns (trained net, per-step losses).
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    rng = Rng(seed)
    params = net.params
    state = nn.adam_init(params)
    trace = []
    b = config.batch_size
    for step in range(steps):
        x0 = rng.normals(b * net.x_dim).reshape(b, net.x_dim)
        target = dataset_sampler(rng, b)
        mu, mu_uncond = cond_provider(rng, target)
        mu = apply_condition_drop(rng, mu, mu_uncond, config.cond_drop)
        t = rng.uniforms(b)
        batch = FlowBatch(x0=x0, target=target, t=t, mu=mu)
        current = VectorFieldNet(params, net.x_dim, net.cond_dim)
        loss, grads = cfm_loss(current, batch, config.sigma_min)
        if not np.isfinite(loss):
            raise NonFiniteError(f"training diverged at step {step}")
        trace.append(loss)
        params, state = nn.adam_step(
            params, grads, state,
            lr=config.lr, beta1=config.beta1, beta2=config.beta2,
            eps=config.adam_eps,
        )
    return VectorFieldNet(params, net.x_dim, net.cond_dim), trace


def _integrate(field_fn, x0: np.ndarray, n_steps: int):
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = nn.as_matrix("x0", x0).copy()
    h = 1.0 / n_steps
    path = FlowSamplePath(times=[0.0], states=[x.copy()])
    for k in range(n_steps):
        v = field_fn(x, k / n_steps)
        x = x + h * v
        if not np.isfinite(x).all():
            raise NonFiniteError(f"sampler state became non-finite at step {k}")
        path.times.append((k + 1) / n_steps)
        path.states.append(x.copy())
    return x, path


def euler_sample(field, mu, x0, n_steps: int):
    """Forward-Euler integration of a velocity field from t=0 to t=1.

    `field` is either a VectorFieldNet or a callable (x, t, mu) -> v.
    Returns (state at t=1, FlowSamplePath).
    """
    if isinstance(field, VectorFieldNet):
        fn = field.evaluate
    else:
        fn = field
    return _integrate(lambda x, t: fn(x, t, mu), x0, n_steps)


def net_layer_sizes(net: VectorFieldNet) -> list[int]:
    sizes = [net.params.in_dim]
    sizes.extend(layer.weight.shape[0] for layer in net.params.layers)
    return sizes


def save_net(directory, stem: str, net: VectorFieldNet, sidecar: dict):
    """FDT1 dump of the flat parameter vector plus a JSON sidecar.

    The sidecar always records the layer sizes, x/cond split, and whatever
    run metadata the caller passes (sigma_min, seed, conditioning setup).
    Returns (tensor path, sidecar path).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    flat = np.concatenate([a.ravel() for a in net.params.arrays()])
    tensor_path = directory / f"{stem}.fdt"
    save_tensor(tensor_path, flat)
    doc = {
        "layer_sizes": net_layer_sizes(net),
        "x_dim": net.x_dim,
        "cond_dim": net.cond_dim,
        "params_file": tensor_path.name,
    }
    doc.update(sidecar)
    sidecar_path = directory / f"{stem}.json"
    sidecar_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return tensor_path, sidecar_path


def load_net(sidecar_path):
    """Rebuild a VectorFieldNet from its sidecar; returns (net, sidecar)."""
    sidecar_path = Path(sidecar_path)
    try:
        doc = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model sidecar {sidecar_path}: {exc}") from exc
    try:
        sizes = [int(s) for s in doc["layer_sizes"]]
        flat = load_tensor(sidecar_path.parent / doc["params_file"])
        x_dim = int(doc["x_dim"])
        cond_dim = int(doc["cond_dim"])
    except KeyError as exc:
        raise ConfigError(f"{sidecar_path}: missing model field {exc}") from exc
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        bias = flat[offset:offset + fan_out]
        offset += fan_out
        layers.append(nn.MlpLayer(w.copy(), bias.copy()))
    if offset != flat.size:
        raise ConfigError(
            f"{sidecar_path}: parameter count {flat.size} does not match "
            f"layer sizes {sizes}"
        )
    return VectorFieldNet(nn.MlpParams(layers), x_dim, cond_dim), doc
