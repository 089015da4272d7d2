"""Lip-phoneme alignment: bidirectional InfoNCE, monotonic alignment
search, the per-phoneme frame-count table, and frame-level upsampling.

Conventions: lip features z_m are (L_v, d) with one row per video frame,
phoneme features z_p are (L_t, d), and the similarity matrix holds raw dot
products Sim[i, j] = z_m[i] . z_p[j]. Losses sum over queries rather than
averaging, and both contrastive directions share one positive-pair set
derived from ground-truth durations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import as_matrix


@dataclass(frozen=True)
class PositivePairs:
    """Ground-truth (lip frame, phoneme) pairs; one phoneme per frame."""

    pairs: tuple[tuple[int, int], ...]

    def mask(self, n_frames: int, n_phonemes: int) -> np.ndarray:
        m = np.zeros((n_frames, n_phonemes), dtype=bool)
        for i, j in self.pairs:
            if not (0 <= i < n_frames and 0 <= j < n_phonemes):
                raise ShapeError(
                    f"positive pair ({i}, {j}) out of range for "
                    f"{n_frames}x{n_phonemes} similarity"
                )
            m[i, j] = True
        return m


def positives_from_durations(durations) -> PositivePairs:
    """Expand per-phoneme frame counts into (frame, phoneme) pairs."""
    durs = [int(d) for d in durations]
    if not durs:
        raise ShapeError("empty duration list")
    if any(d < 1 for d in durs):
        raise ShapeError(f"durations must all be >= 1, got {durs}")
    pairs = []
    frame = 0
    for j, d in enumerate(durs):
        for _ in range(d):
            pairs.append((frame, j))
            frame += 1
    return PositivePairs(tuple(pairs))


def frame_labels(positives: PositivePairs) -> np.ndarray:
    """Per-frame phoneme index implied by the positive pairs."""
    n = len(positives.pairs)
    labels = np.full(n, -1, dtype=np.int64)
    for i, j in positives.pairs:
        if i >= n or labels[i] != -1:
            raise ShapeError("positive pairs do not define one phoneme per frame")
        labels[i] = j
    return labels


def similarity(z_m, z_p) -> np.ndarray:
    """Dot-product similarity matrix, (L_v, L_t)."""
    z_m = as_matrix("z_m", z_m)
    z_p = as_matrix("z_p", z_p)
    if z_m.shape[1] != z_p.shape[1]:
        raise ShapeError(
            f"feature dims differ: z_m has {z_m.shape[1]}, z_p has {z_p.shape[1]}"
        )
    return z_m @ z_p.T


def _logsumexp(values: np.ndarray) -> float:
    hi = values.max()
    return float(hi + np.log(np.exp(values - hi).sum()))


def _nce_directional(logits: np.ndarray, mask: np.ndarray):
    """Summed -log(positive softmax mass) over rows, plus d/d logits."""
    loss = 0.0
    grad = np.empty_like(logits)
    for r in range(logits.shape[0]):
        row = logits[r]
        pos = mask[r]
        if not pos.any():
            raise ShapeError(f"query {r} has no positive pair")
        lse_all = _logsumexp(row)
        lse_pos = _logsumexp(row[pos])
        loss += lse_all - lse_pos
        p_all = np.exp(row - lse_all)
        p_pos = np.zeros_like(row)
        p_pos[pos] = np.exp(row[pos] - lse_pos)
        grad[r] = p_all - p_pos
    return loss, grad


def infonce_mp(sim, positives: PositivePairs, tau: float) -> float:
    """Lip-to-phoneme contrastive loss (lip frames are the queries)."""
    return infonce_mp_grad(sim, positives, tau)[0]


def infonce_mp_grad(sim, positives: PositivePairs, tau: float):
    sim = as_matrix("sim", sim)
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    mask = positives.mask(*sim.shape)
    loss, dlogits = _nce_directional(sim / tau, mask)
    return loss, dlogits / tau


def infonce_pm(sim, positives: PositivePairs, tau: float) -> float:
    """Phoneme-to-lip contrastive loss (phonemes are the queries)."""
    return infonce_pm_grad(sim, positives, tau)[0]


def infonce_pm_grad(sim, positives: PositivePairs, tau: float):
    sim = as_matrix("sim", sim)
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    mask = positives.mask(*sim.shape)
    loss, dlogits_t = _nce_directional(sim.T / tau, mask.T)
    return loss, dlogits_t.T / tau


def dual_loss(l_mp: float, l_pm: float) -> float:
    """Arithmetic mean of the two contrastive directions."""
    if not (np.isfinite(l_mp) and np.isfinite(l_pm)):
        raise ValueError("dual loss requires finite inputs")
    return 0.5 * l_mp + 0.5 * l_pm


@dataclass
class DualContrastiveResult:
    l_mp: float
    l_pm: float
    l_dua: float
    grad_z_m: np.ndarray
    grad_z_p: np.ndarray


def dual_contrastive(z_m, z_p, positives: PositivePairs, tau: float):
    """Both losses, their mean, and gradients w.r.t. the embeddings."""
    z_m = as_matrix("z_m", z_m)
    z_p = as_matrix("z_p", z_p)
    sim = similarity(z_m, z_p)
    l_mp, g_mp = infonce_mp_grad(sim, positives, tau)
    l_pm, g_pm = infonce_pm_grad(sim, positives, tau)
    g_sim = 0.5 * (g_mp + g_pm)
    return DualContrastiveResult(
        l_mp=l_mp,
        l_pm=l_pm,
        l_dua=dual_loss(l_mp, l_pm),
        grad_z_m=g_sim @ z_p,
        grad_z_p=g_sim.T @ z_m,
    )


def mas(sim):
    """Best monotonic surjective frame-to-phoneme alignment.

    Every phoneme receives a contiguous run of at least one frame, runs
    are ordered, and all frames are covered; the returned alignment
    maximizes the total similarity along the path. Ties prefer starting
    each phoneme at the earliest feasible frame, resolved from the last
    phoneme backwards, which makes the path canonical.

    Returns (tab, path): per-phoneme frame counts and the per-frame
    phoneme index.
    """
    sim = as_matrix("sim", sim)
    n_frames, n_phon = sim.shape
    if n_frames < n_phon:
        raise ShapeError(
            f"infeasible alignment: {n_frames} frames < {n_phon} phonemes"
        )
    if n_phon == 0:
        raise ShapeError("similarity has zero phoneme columns")
    best = np.full((n_frames, n_phon), -np.inf)
    best[0, 0] = sim[0, 0]
    for i in range(1, n_frames):
        jhi = min(i, n_phon - 1)
        best[i, 0] = best[i - 1, 0] + sim[i, 0]
        for j in range(1, jhi + 1):
            best[i, j] = sim[i, j] + max(best[i - 1, j], best[i - 1, j - 1])
    path = np.empty(n_frames, dtype=np.int64)
    j = n_phon - 1
    path[n_frames - 1] = j
    for i in range(n_frames - 1, 0, -1):
        # strict '>' keeps the current phoneme on ties, i.e. its run
        # extends back as far as possible
        if j > 0 and best[i - 1, j - 1] > best[i - 1, j]:
            j -= 1
        path[i - 1] = j
    tab = np.bincount(path, minlength=n_phon)
    return tab, path


def upsample(features, tab) -> np.ndarray:
    """Repeat row j of `features` tab[j] times, preserving order."""
    features = as_matrix("features", features)
    counts = np.asarray(tab, dtype=np.int64)
    if counts.ndim != 1 or counts.shape[0] != features.shape[0]:
        raise ShapeError(
            f"tab length {counts.shape} does not match {features.shape[0]} rows"
        )
    if np.any(counts < 1):
        raise ShapeError(f"tab entries must all be >= 1, got {counts.tolist()}")
    return np.repeat(features, counts, axis=0)


def row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def lip_attention(z_m, z_p, sim, heads: int = 1) -> np.ndarray:
    """Lip-aligned phoneme mixture: softmax(sim / sqrt(d)) @ z_p.

    The similarity matrix is shared by every head, so the multi-head form
    collapses to a single head; `heads` is validated only.
    """
    z_m = as_matrix("z_m", z_m)
    z_p = as_matrix("z_p", z_p)
    sim = as_matrix("sim", sim)
    d = z_p.shape[1]
    if sim.shape != (z_m.shape[0], z_p.shape[0]):
        raise ShapeError(
            f"sim shape {sim.shape} != ({z_m.shape[0]}, {z_p.shape[0]})"
        )
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"head count {heads} must divide feature dim {d}")
    weights = row_softmax(sim / np.sqrt(d))
    return weights @ z_p
