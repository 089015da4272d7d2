"""Style injection and decoupled classifier-free guidance.

The condition prior passes through a two-stage elementwise affine before
conditioning the flow net. Guidance runs the net twice per Euler step, on
the styled condition and on an unconditional twin whose semantic-feature
stream is zeroed, and combines the two fields as
v_cond + alpha * (v_cond - v_uncond). Only the semantic stream differs
between the twins, so the lip and phoneme streams are never disturbed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conditioning
from .errors import ShapeError
from .flow import VectorFieldNet, _integrate
from .nn import as_matrix, as_vector


@dataclass
class StyleAffine:
    """Two chained elementwise affines over the condition feature axis."""

    gamma1: np.ndarray
    beta1: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray

    def arrays(self):
        return [self.gamma1, self.beta1, self.gamma2, self.beta2]


def identity_style(d: int) -> StyleAffine:
    return StyleAffine(np.ones(d), np.zeros(d), np.ones(d), np.zeros(d))


def satl_transform(mu, style: StyleAffine) -> np.ndarray:
    """Apply gamma2 * (gamma1 * mu + beta1) + beta2 per frame."""
    mu = as_matrix("mu", mu)
    d = mu.shape[1]
    for name, vec in zip(("gamma1", "beta1", "gamma2", "beta2"), style.arrays()):
        v = as_vector(name, vec)
        if v.shape[0] != d:
            raise ShapeError(f"{name} length {v.shape[0]} != feature dim {d}")
    return style.gamma2 * (style.gamma1 * mu + style.beta1) + style.beta2


@dataclass
class StyleHead:
    """Linear map from a style vector to the four affine parameter rows."""

    weight: np.ndarray  # (4d, style_dim)
    bias: np.ndarray  # (4d,)


def init_style_head(feature_dim: int, style_dim: int) -> StyleHead:
    # identity start: gammas 1, betas 0, so an untrained head is a no-op
    bias = np.concatenate(
        [np.ones(feature_dim), np.zeros(feature_dim),
         np.ones(feature_dim), np.zeros(feature_dim)]
    )
    return StyleHead(np.zeros((4 * feature_dim, style_dim)), bias)


def apply_style_head(head: StyleHead, style_vec) -> StyleAffine:
    style_vec = as_vector("style vector", style_vec)
    if head.weight.shape[1] != style_vec.shape[0]:
        raise ShapeError(
            f"style head expects dim {head.weight.shape[1]}, "
            f"got {style_vec.shape[0]}"
        )
    flat = head.weight @ style_vec + head.bias
    d = flat.shape[0] // 4
    return StyleAffine(flat[:d], flat[d:2 * d], flat[2 * d:3 * d], flat[3 * d:])


@dataclass
class ConditionBundle:
    """The two condition streams plus the guidance scale."""

    mu_satl: np.ndarray
    mu_prime: np.ndarray
    alpha: float

    def __post_init__(self):
        self.mu_satl = as_matrix("mu_satl", self.mu_satl)
        self.mu_prime = as_matrix("mu_prime", self.mu_prime)
        if self.mu_satl.shape != self.mu_prime.shape:
            raise ShapeError(
                f"mu_satl shape {self.mu_satl.shape} != mu_prime shape "
                f"{self.mu_prime.shape}"
            )
        if self.alpha < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.alpha}")


def build_unconditional(c_lip, z_p, tab, n: int, fusion) -> np.ndarray:
    """Fused condition with the semantic-feature stream replaced by zeros.

    Runs the exact fusion path, so the output is bitwise what
    fuse_condition produces when handed a zero semantic stream.
    """
    z_p = as_matrix("z_p", z_p)
    zeros = np.zeros_like(z_p)
    return conditioning.fuse_condition(c_lip, zeros, z_p, tab, n, fusion)


def cfg_field(v_cond, v_uncond, alpha: float) -> np.ndarray:
    """Guided field v_cond + alpha * (v_cond - v_uncond)."""
    v_cond = as_matrix("v_cond", v_cond)
    v_uncond = as_matrix("v_uncond", v_uncond)
    if v_cond.shape != v_uncond.shape:
        raise ShapeError(
            f"v_cond shape {v_cond.shape} != v_uncond shape {v_uncond.shape}"
        )
    if alpha < 0:
        raise ValueError(f"guidance scale must be >= 0, got {alpha}")
    if alpha == 0.0:
        return v_cond.copy()
    return v_cond + alpha * (v_cond - v_uncond)


def guided_euler_sample(net, bundle: ConditionBundle, x0, n_steps: int):
    """Euler sampling with per-step guidance.

    At alpha == 0 the unconditional evaluation is skipped entirely, so the
    result is bitwise identical to unguided sampling under mu_satl.
    Returns (state at t=1, FlowSamplePath).
    """
    if isinstance(net, VectorFieldNet):
        evaluate = net.evaluate
    else:
        evaluate = net
    alpha = bundle.alpha
    if alpha == 0.0:
        def field(x, t):
            return evaluate(x, t, bundle.mu_satl)
    else:
        def field(x, t):
            v_cond = evaluate(x, t, bundle.mu_satl)
            v_uncond = evaluate(x, t, bundle.mu_prime)
            return cfg_field(v_cond, v_uncond, alpha)
    return _integrate(field, x0, n_steps)
