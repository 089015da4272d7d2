"""Phoneme-level cross-modal conditioning and stream fusion.

A small stack of cross-attention layers lets a phoneme-level query
sequence absorb information from a memory sequence of synthetic
speech-model features; the result joins the lip-aligned and phoneme
streams in a per-frame linear fusion followed by nearest-neighbor
temporal upsampling to mel resolution.

Gradients are derived by hand (layer norm, scaled dot-product attention,
tanh feed-forward, fusion, repeat-upsampling) so the whole conditioning
path can be checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align import row_softmax, upsample
from .errors import ConfigError, ShapeError
from .nn import as_matrix
from .rng import Rng

_LN_EPS = 1e-5


@dataclass
class LayerNormParams:
    gain: np.ndarray  # (d,)
    bias: np.ndarray  # (d,)

    def arrays(self):
        return [self.gain, self.bias]


@dataclass
class AttentionParams:
    wq: np.ndarray  # (d, d)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def arrays(self):
        return [self.wq, self.wk, self.wv, self.wo]


@dataclass
class FeedForwardParams:
    w1: np.ndarray  # (d_ff, d)
    b1: np.ndarray  # (d_ff,)
    w2: np.ndarray  # (d, d_ff)
    b2: np.ndarray  # (d,)

    def arrays(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class CrossModalLayerParams:
    ln1: LayerNormParams  # shared by the query and memory streams
    attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams

    def arrays(self):
        return (
            self.ln1.arrays() + self.attn.arrays()
            + self.ln2.arrays() + self.ffn.arrays()
        )


@dataclass
class CrossModalStack:
    layers: list[CrossModalLayerParams]
    heads: int

    @property
    def depth(self) -> int:
        return len(self.layers)

    def arrays(self):
        out = []
        for layer in self.layers:
            out.extend(layer.arrays())
        return out


def _uniform_weight(rng: Rng, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(cols)
    return ((rng.uniforms(rows * cols) * 2.0 - 1.0) * bound).reshape(rows, cols)


def init_cross_modal_stack(
    d: int, depth: int, heads: int, rng: Rng, d_ff: int | None = None
) -> CrossModalStack:
    if depth < 1:
        raise ConfigError(f"stack depth must be >= 1, got {depth}")
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"head count {heads} must divide model dim {d}")
    if d_ff is None:
        d_ff = 2 * d
    layers = []
    for _ in range(depth):
        layers.append(
            CrossModalLayerParams(
                ln1=LayerNormParams(np.ones(d), np.zeros(d)),
                attn=AttentionParams(
                    wq=_uniform_weight(rng, d, d),
                    wk=_uniform_weight(rng, d, d),
                    wv=_uniform_weight(rng, d, d),
                    wo=_uniform_weight(rng, d, d),
                ),
                ln2=LayerNormParams(np.ones(d), np.zeros(d)),
                ffn=FeedForwardParams(
                    w1=_uniform_weight(rng, d_ff, d),
                    b1=np.zeros(d_ff),
                    w2=_uniform_weight(rng, d, d_ff),
                    b2=np.zeros(d),
                ),
            )
        )
    return CrossModalStack(layers=layers, heads=heads)


def _ln_forward(params: LayerNormParams, x: np.ndarray):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + _LN_EPS)
    xhat = centered * inv
    return params.gain * xhat + params.bias, (xhat, inv)


def _ln_backward(params: LayerNormParams, cache, d_out: np.ndarray):
    xhat, inv = cache
    d_gain = (d_out * xhat).sum(axis=0)
    d_bias = d_out.sum(axis=0)
    d_xhat = d_out * params.gain
    d_x = inv * (
        d_xhat
        - d_xhat.mean(axis=1, keepdims=True)
        - xhat * (d_xhat * xhat).mean(axis=1, keepdims=True)
    )
    return d_x, d_gain, d_bias


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    rows, d = x.shape
    return x.reshape(rows, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    heads, rows, dh = x.shape
    return x.transpose(1, 0, 2).reshape(rows, heads * dh)


def _layer_forward(layer: CrossModalLayerParams, z_prev, s_llm, heads: int):
    qn, qn_cache = _ln_forward(layer.ln1, z_prev)
    kn, kn_cache = _ln_forward(layer.ln1, s_llm)
    q = qn @ layer.attn.wq.T
    k = kn @ layer.attn.wk.T
    v = kn @ layer.attn.wv.T
    dh = q.shape[1] // heads
    scale = 1.0 / np.sqrt(dh)
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    probs = np.empty((heads, qh.shape[1], kh.shape[1]))
    ctx = np.empty_like(qh)
    for h in range(heads):
        probs[h] = row_softmax(qh[h] @ kh[h].T * scale)
        ctx[h] = probs[h] @ vh[h]
    mixed = _merge_heads(ctx)
    attn_out = mixed @ layer.attn.wo.T
    zhat = attn_out + qn
    mn, mn_cache = _ln_forward(layer.ln2, zhat)
    pre = mn @ layer.ffn.w1.T + layer.ffn.b1
    act = np.tanh(pre)
    ffn_out = act @ layer.ffn.w2.T + layer.ffn.b2
    z_out = ffn_out + mn
    cache = {
        "qn": qn, "qn_cache": qn_cache,
        "kn": kn, "kn_cache": kn_cache,
        "qh": qh, "kh": kh, "vh": vh,
        "probs": probs, "mixed": mixed,
        "mn": mn, "mn_cache": mn_cache,
        "act": act, "scale": scale,
    }
    return z_out, cache


@dataclass
class CrossModalLayerGrads:
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams

    def arrays(self):
        return (
            self.ln1.arrays() + self.attn.arrays()
            + self.ln2.arrays() + self.ffn.arrays()
        )


def _zero_layer_grads(layer: CrossModalLayerParams) -> CrossModalLayerGrads:
    return CrossModalLayerGrads(
        ln1=LayerNormParams(*[np.zeros_like(a) for a in layer.ln1.arrays()]),
        attn=AttentionParams(*[np.zeros_like(a) for a in layer.attn.arrays()]),
        ln2=LayerNormParams(*[np.zeros_like(a) for a in layer.ln2.arrays()]),
        ffn=FeedForwardParams(*[np.zeros_like(a) for a in layer.ffn.arrays()]),
    )


def _layer_backward(layer, cache, heads: int, d_out: np.ndarray):
    grads = _zero_layer_grads(layer)
    mn = cache["mn"]
    act = cache["act"]
    # feed-forward sublayer with residual on the normed input
    d_ffn = d_out
    d_mn = d_out.copy()
    d_act = d_ffn @ layer.ffn.w2
    grads.ffn.w2 += d_ffn.T @ act
    grads.ffn.b2 += d_ffn.sum(axis=0)
    d_pre = d_act * (1.0 - act * act)
    grads.ffn.w1 += d_pre.T @ mn
    grads.ffn.b1 += d_pre.sum(axis=0)
    d_mn += d_pre @ layer.ffn.w1
    d_zhat, dg2, db2 = _ln_backward(layer.ln2, cache["mn_cache"], d_mn)
    grads.ln2.gain += dg2
    grads.ln2.bias += db2
    # attention sublayer with residual on the normed query
    d_attn_out = d_zhat
    d_qn = d_zhat.copy()
    d_mixed = d_attn_out @ layer.attn.wo
    grads.attn.wo += d_attn_out.T @ cache["mixed"]
    d_ctx = _split_heads(d_mixed, heads)
    qh, kh, vh, probs = cache["qh"], cache["kh"], cache["vh"], cache["probs"]
    scale = cache["scale"]
    d_qh = np.empty_like(qh)
    d_kh = np.empty_like(kh)
    d_vh = np.empty_like(vh)
    for h in range(heads):
        d_probs = d_ctx[h] @ vh[h].T
        d_vh[h] = probs[h].T @ d_ctx[h]
        d_logits = probs[h] * (
            d_probs - (d_probs * probs[h]).sum(axis=1, keepdims=True)
        )
        d_qh[h] = d_logits @ kh[h] * scale
        d_kh[h] = d_logits.T @ qh[h] * scale
    d_q = _merge_heads(d_qh)
    d_k = _merge_heads(d_kh)
    d_v = _merge_heads(d_vh)
    qn, kn = cache["qn"], cache["kn"]
    grads.attn.wq += d_q.T @ qn
    grads.attn.wk += d_k.T @ kn
    grads.attn.wv += d_v.T @ kn
    d_qn += d_q @ layer.attn.wq
    d_kn = d_k @ layer.attn.wk + d_v @ layer.attn.wv
    d_z, dg_q, db_q = _ln_backward(layer.ln1, cache["qn_cache"], d_qn)
    d_s, dg_k, db_k = _ln_backward(layer.ln1, cache["kn_cache"], d_kn)
    grads.ln1.gain += dg_q + dg_k  # ln1 is shared by both streams
    grads.ln1.bias += db_q + db_k
    return grads, d_z, d_s


def _check_streams(z: np.ndarray, s: np.ndarray, stack: CrossModalStack):
    if z.shape[0] < 1 or s.shape[0] < 1:
        raise ShapeError("query and memory sequences must be non-empty")
    d = stack.layers[0].ln1.gain.shape[0]
    if z.shape[1] != d or s.shape[1] != d:
        raise ShapeError(
            f"feature dims {z.shape[1]}/{s.shape[1]} != stack dim {d}"
        )


def cross_modal_layer(z_prev, s_llm, layer: CrossModalLayerParams, heads: int = 1):
    """One cross-attention + feed-forward layer over a query sequence."""
    z_prev = as_matrix("z_prev", z_prev)
    s_llm = as_matrix("s_llm", s_llm)
    if z_prev.shape[1] != s_llm.shape[1]:
        raise ShapeError(
            f"query dim {z_prev.shape[1]} != memory dim {s_llm.shape[1]}"
        )
    out, _ = _layer_forward(layer, z_prev, s_llm, heads)
    return out


def phoneme_semantic(pho_embeddings, s_llm, stack: CrossModalStack) -> np.ndarray:
    """Run the full stack; each layer attends to the original memory."""
    out, _ = phoneme_semantic_with_cache(pho_embeddings, s_llm, stack)
    return out


def phoneme_semantic_with_cache(pho_embeddings, s_llm, stack: CrossModalStack):
    z = as_matrix("phoneme embeddings", pho_embeddings)
    s = as_matrix("s_llm", s_llm)
    _check_streams(z, s, stack)
    caches = []
    for layer in stack.layers:
        z, cache = _layer_forward(layer, z, s, stack.heads)
        caches.append(cache)
    return z, caches


@dataclass
class StackGrads:
    layers: list[CrossModalLayerGrads]

    def arrays(self):
        out = []
        for layer in self.layers:
            out.extend(layer.arrays())
        return out


def phoneme_semantic_backward(stack: CrossModalStack, caches, s_llm, d_out):
    """Backward through the stack; returns (grads, d_query, d_memory)."""
    d_z = np.asarray(d_out, dtype=np.float64)
    d_s_total = np.zeros_like(as_matrix("s_llm", s_llm))
    layer_grads = []
    for layer, cache in zip(reversed(stack.layers), reversed(caches)):
        grads, d_z, d_s = _layer_backward(layer, cache, stack.heads, d_z)
        layer_grads.append(grads)
        d_s_total += d_s
    layer_grads.reverse()
    return StackGrads(layer_grads), d_z, d_s_total


@dataclass
class FusionParams:
    weight: np.ndarray  # (d, 3d)
    bias: np.ndarray  # (d,)

    def arrays(self):
        return [self.weight, self.bias]


def init_fusion(d: int) -> FusionParams:
    # average the three streams so an untrained fusion is already sensible
    eye = np.eye(d)
    return FusionParams(np.hstack([eye, eye, eye]) / 3.0, np.zeros(d))


def fuse_condition(c_lip, llm_p, z_p, tab, n: int, fusion: FusionParams):
    """Mel-level prior: fuse the three streams and upsample by factor n."""
    mu, _ = fuse_condition_with_cache(c_lip, llm_p, z_p, tab, n, fusion)
    return mu


def fuse_condition_with_cache(c_lip, llm_p, z_p, tab, n: int, fusion: FusionParams):
    c_lip = as_matrix("c_lip", c_lip)
    llm_p = as_matrix("llm_p", llm_p)
    z_p = as_matrix("z_p", z_p)
    counts = np.asarray(tab, dtype=np.int64)
    if n < 1:
        raise ConfigError(f"temporal factor n must be >= 1, got {n}")
    if llm_p.shape != z_p.shape:
        raise ShapeError(
            f"llm_p shape {llm_p.shape} != z_p shape {z_p.shape}"
        )
    if counts.sum() != c_lip.shape[0]:
        raise ShapeError(
            f"tab sums to {counts.sum()} but c_lip has {c_lip.shape[0]} frames"
        )
    stacked = np.hstack([c_lip, upsample(llm_p, counts), upsample(z_p, counts)])
    if stacked.shape[1] != fusion.weight.shape[1]:
        raise ShapeError(
            f"fusion expects width {fusion.weight.shape[1]}, "
            f"got {stacked.shape[1]}"
        )
    fused = stacked @ fusion.weight.T + fusion.bias
    mu = np.repeat(fused, n, axis=0)
    return mu, (stacked, counts, n)


def fuse_condition_backward(fusion: FusionParams, cache, d_mu):
    """Backward of the fusion map; returns grads and stream gradients."""
    stacked, counts, n = cache
    l_v = stacked.shape[0]
    d = fusion.weight.shape[0]
    d_mu = np.asarray(d_mu, dtype=np.float64)
    d_fused = d_mu.reshape(l_v, n, d).sum(axis=1)
    d_weight = d_fused.T @ stacked
    d_bias = d_fused.sum(axis=0)
    d_stacked = d_fused @ fusion.weight
    d_c_lip = d_stacked[:, :d]
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    d_llm_p = np.add.reduceat(d_stacked[:, d:2 * d], offsets, axis=0)
    d_z_p = np.add.reduceat(d_stacked[:, 2 * d:], offsets, axis=0)
    return FusionParams(d_weight, d_bias), d_c_lip, d_llm_p, d_z_p


def init_phoneme_embedding(
    vocab: int, d: int, rng: Rng, unit_norm: bool = True
) -> np.ndarray:
    """Random embedding table, rows optionally normalized to unit length."""
    if vocab < 1 or d < 1:
        raise ConfigError(f"vocab and dim must be positive, got {vocab}, {d}")
    table = rng.normal_matrix(vocab, d)
    if unit_norm:
        table /= np.linalg.norm(table, axis=1, keepdims=True)
    return table


def embed_phonemes(table, ids) -> np.ndarray:
    table = as_matrix("embedding table", table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or idx.size < 1:
        raise ShapeError("phoneme ids must form a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ShapeError(
            f"phoneme id out of range [0, {table.shape[0]}): {idx.tolist()}"
        )
    return table[idx]
