"""Report rendering: PNG figures and raw PGM dumps.

matplotlib is imported lazily with the Agg backend so library users and
``--no-plots`` CLI runs never pay for it. Figures carry fixed metadata so
repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .nn import as_matrix

_PNG_METADATA = {"Software": "flowdub"}


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    import matplotlib.pyplot as plt

    plt.close(fig)


def write_pgm(path, matrix) -> None:
    """8-bit binary PGM (P5), min-max normalized per image."""
    arr = as_matrix("image", matrix)
    lo, hi = arr.min(), arr.max()
    if hi > lo:
        scaled = (arr - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(arr)
    pixels = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes(order="C"))


def save_loss_curve(path, losses) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(losses)), losses, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title("training loss")
    fig.tight_layout()
    _save(fig, path)


def save_spectrogram(path, mel, title: str = "mel") -> None:
    plt = _plt()
    mel = as_matrix("mel", mel)
    fig, ax = plt.subplots(figsize=(6, 3))
    im = ax.imshow(mel.T, origin="lower", aspect="auto", cmap="magma")
    ax.set_xlabel("frame")
    ax.set_ylabel("bin")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    _save(fig, path)


def save_alignment(path, sim, frame_path) -> None:
    """Similarity heatmap with the selected frame-to-phoneme path."""
    plt = _plt()
    sim = as_matrix("sim", sim)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(sim, origin="lower", aspect="auto", cmap="viridis")
    ax.plot(np.asarray(frame_path), np.arange(sim.shape[0]), "r.-", lw=1.0)
    ax.set_xlabel("phoneme")
    ax.set_ylabel("lip frame")
    ax.set_title("similarity and alignment path")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    _save(fig, path)


def save_alpha_sweep(path, alphas, deviations) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(alphas, deviations, "o-")
    ax.set_xlabel("guidance scale")
    ax.set_ylabel("deviation from unguided sample")
    ax.set_title("guidance sweep")
    fig.tight_layout()
    _save(fig, path)


def save_scatter(path, points, title: str = "samples") -> None:
    plt = _plt()
    pts = as_matrix("points", points)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if pts.shape[1] >= 2:
        ax.plot(pts[:, 0], pts[:, 1], ".", ms=2, alpha=0.5)
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
    else:
        ax.hist(pts[:, 0], bins=60)
        ax.set_xlabel("x0")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def save_dtw_path(path, dtw_path, m: int, n: int) -> None:
    plt = _plt()
    pairs = np.asarray(dtw_path)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(pairs[:, 1], pairs[:, 0], "b.-", lw=1.0)
    ax.set_xlim(-0.5, n - 0.5)
    ax.set_ylim(-0.5, m - 0.5)
    ax.set_xlabel("reference frame")
    ax.set_ylabel("generated frame")
    ax.set_title("DTW warp path")
    fig.tight_layout()
    _save(fig, path)
