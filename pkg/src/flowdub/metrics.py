"""Dubbing metric family: cepstral distance, DTW, and length weighting.

mcd_frame is the classic decibel-scaled Euclidean distance between
cepstral vectors. dtw aligns two cepstral sequences with the step set
{(1,0), (0,1), (1,1)} and unit weights; mcd_dtw divides the accumulated
distance by the warp-path length R, and mcd_dtw_sl multiplies by the
length ratio eta = max(M,N)/min(M,N). With eta fixed by known sequence
lengths the SL variant rewards length matching, not content alignment,
which is exactly why it is reported separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import ShapeError
from .nn import as_matrix, as_vector

MCD_CONST = 10.0 * np.sqrt(2.0) / np.log(10.0)


def mfcc(mel, k: int) -> np.ndarray:
    """Log-compress each frame and keep DCT-II coefficients 1..k.

    The 0th (energy) coefficient is dropped; the DCT is orthonormal.
    """
    mel = as_matrix("mel", mel)
    bins = mel.shape[1]
    if k < 1:
        raise ShapeError(f"need at least one coefficient, got k={k}")
    if bins < k + 1:
        raise ShapeError(f"k={k} too large for {bins} mel bins (need >= k+1)")
    log_mel = np.log(np.maximum(mel, 1e-10))
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, 1:k + 1]


def mcd_frame(c, c_prime) -> float:
    """Decibel-scaled Euclidean distance between two cepstral vectors."""
    c = as_vector("c", c)
    c_prime = as_vector("c_prime", c_prime)
    if c.shape != c_prime.shape:
        raise ShapeError(f"cepstra differ in length: {c.shape} vs {c_prime.shape}")
    return float(MCD_CONST * np.linalg.norm(c - c_prime))


@dataclass
class DtwResult:
    gamma: float  # accumulated distance along the optimal path
    r: int  # warp-path length
    path: list[tuple[int, int]]  # 0-indexed (i, j) pairs


def dtw(c_seq, c_prime_seq) -> DtwResult:
    """Minimal accumulated frame distance under monotone warping.

    Cell cost is mcd_frame; steps are down, right, and diagonal with unit
    weights. Backtracking prefers the diagonal on ties, then the i-1 step.
    """
    a = as_matrix("first sequence", c_seq)
    b = as_matrix("second sequence", c_prime_seq)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"cepstral dims differ: {a.shape[1]} vs {b.shape[1]}"
        )
    m, n = a.shape[0], b.shape[0]
    if m == 0 or n == 0:
        raise ShapeError("sequences must be non-empty")
    diff = a[:, None, :] - b[None, :, :]
    cost = MCD_CONST * np.sqrt((diff * diff).sum(axis=2))
    acc = np.full((m, n), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(1, m):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for j in range(1, n):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, m):
        for j in range(1, n):
            acc[i, j] = cost[i, j] + min(
                acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            )
    path = [(m - 1, n - 1)]
    i, j = m - 1, n - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return DtwResult(gamma=float(acc[m - 1, n - 1]), r=len(path), path=path)


def mcd_dtw(c_seq, c_prime_seq) -> float:
    """Accumulated DTW distance averaged over the warp-path length."""
    result = dtw(c_seq, c_prime_seq)
    return result.gamma / result.r


def eta(m: int, n: int) -> float:
    if m < 1 or n < 1:
        raise ShapeError(f"sequence lengths must be positive, got {m}, {n}")
    return max(m, n) / min(m, n)


def mcd_dtw_sl(c_seq, c_prime_seq) -> float:
    """Length-weighted variant: eta * mcd_dtw."""
    a = as_matrix("first sequence", c_seq)
    b = as_matrix("second sequence", c_prime_seq)
    return eta(a.shape[0], b.shape[0]) * mcd_dtw(a, b)


def duration_coefficient(sample_rate: int, hop: int, fps: int) -> int:
    """Mel frames per video frame: (sample_rate / hop) / fps.

    The three rates must divide to a positive integer; anything else is a
    configuration inconsistency.
    """
    if sample_rate <= 0 or hop <= 0 or fps <= 0:
        raise ValueError(
            f"rates must be positive, got sr={sample_rate}, hop={hop}, fps={fps}"
        )
    denom = hop * fps
    n, rem = divmod(int(sample_rate), int(denom))
    if rem != 0:
        raise ValueError(
            f"(sr/hop)/fps = {sample_rate / denom:g} is not a positive "
            "integer; check the audio/video configuration"
        )
    return n


def expected_mel_length(video_frames: int, n: int) -> int:
    if video_frames < 1 or n < 1:
        raise ValueError(
            f"need positive lengths, got video_frames={video_frames}, n={n}"
        )
    return n * video_frames
