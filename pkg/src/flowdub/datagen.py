"""Synthetic data with known ground truth.

Two families: Gaussian mixtures as flow-matching targets, and dubbing
instances whose lip features are noisy copies of per-phoneme prototype
embeddings. The planted alignment is recoverable: at zero noise the
monotonic alignment search over the lip/prototype similarity returns the
planted durations exactly (phoneme ids are drawn without immediate
repeats so adjacent prototypes always differ).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import align
from .conditioning import embed_phonemes, init_phoneme_embedding
from .errors import ConfigError, ShapeError
from .nn import as_matrix, as_vector, ensure_finite
from .rng import Rng, subseed
from .tensorio import load_tensor, save_tensor


@dataclass
class MixtureComponent:
    mean: np.ndarray
    cov_diag: np.ndarray  # diagonal covariance; zero entries degenerate
    weight: float


@dataclass
class MixtureSpec:
    components: list[MixtureComponent]

    def __post_init__(self):
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        dims = set()
        total = 0.0
        for i, comp in enumerate(self.components):
            comp.mean = as_vector(f"component {i} mean", comp.mean)
            comp.cov_diag = as_vector(f"component {i} covariance", comp.cov_diag)
            if comp.mean.shape != comp.cov_diag.shape:
                raise ConfigError(
                    f"component {i}: mean and covariance lengths differ"
                )
            if np.any(comp.cov_diag < 0):
                raise ConfigError(f"component {i}: negative covariance entries")
            if comp.weight < 0:
                raise ConfigError(f"component {i}: negative weight")
            dims.add(comp.mean.shape[0])
            total += comp.weight
        if len(dims) != 1:
            raise ConfigError(f"components disagree on dimension: {sorted(dims)}")
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"weights must sum to 1, got {total}")

    @property
    def dim(self) -> int:
        return self.components[0].mean.shape[0]

    def mean(self) -> np.ndarray:
        return sum(c.weight * c.mean for c in self.components)

    def to_dict(self) -> dict:
        return {
            "components": [
                {
                    "mean": c.mean.tolist(),
                    "cov_diag": c.cov_diag.tolist(),
                    "weight": c.weight,
                }
                for c in self.components
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureSpec":
        return cls(
            [
                MixtureComponent(
                    np.asarray(c["mean"], dtype=np.float64),
                    np.asarray(c["cov_diag"], dtype=np.float64),
                    float(c["weight"]),
                )
                for c in data["components"]
            ]
        )


def sample_mixture(spec: MixtureSpec, count: int, seed: int) -> np.ndarray:
    """count i.i.d. draws, deterministic per seed."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    rng = Rng(seed)
    d = spec.dim
    weights = [c.weight for c in spec.components]
    out = np.empty((count, d))
    for row in range(count):
        comp = spec.components[rng.choice(weights)]
        out[row] = comp.mean + np.sqrt(comp.cov_diag) * rng.normals(d)
    return out


@dataclass
class DubInstance:
    """One synthetic dubbing example with planted frame-phoneme alignment."""

    phoneme_ids: np.ndarray  # (L_t,) ints
    durations: np.ndarray  # (L_t,) ints, frames per phoneme
    z_m: np.ndarray  # (L_v, d) lip features
    z_p: np.ndarray  # (L_t, d) phoneme prototype embeddings
    s_llm: np.ndarray  # (L_s, d) synthetic semantic features
    style: np.ndarray  # (style_dim,)
    target_mel: np.ndarray  # (n * L_v, bins)
    n: int  # mel frames per video frame
    seed: int
    vocab: int
    noise: float


def validate_instance(inst: DubInstance) -> None:
    ids = np.asarray(inst.phoneme_ids, dtype=np.int64)
    durs = np.asarray(inst.durations, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise ShapeError("phoneme_ids must be a non-empty 1-D sequence")
    if durs.shape != ids.shape:
        raise ShapeError("durations must pair with phoneme_ids")
    if np.any(durs < 1):
        raise ShapeError("durations must all be >= 1")
    z_m = as_matrix("z_m", inst.z_m)
    z_p = as_matrix("z_p", inst.z_p)
    mel = as_matrix("target_mel", inst.target_mel)
    as_vector("style", inst.style)
    as_matrix("s_llm", inst.s_llm)
    l_v = int(durs.sum())
    if z_m.shape[0] != l_v:
        raise ShapeError(
            f"z_m rows {z_m.shape[0]} != total duration {l_v}"
        )
    if z_p.shape[0] != ids.size:
        raise ShapeError(f"z_p rows {z_p.shape[0]} != phoneme count {ids.size}")
    if z_p.shape[1] != z_m.shape[1]:
        raise ShapeError("z_m and z_p disagree on feature dim")
    if inst.n < 1:
        raise ShapeError(f"duration coefficient must be >= 1, got {inst.n}")
    if mel.shape[0] != inst.n * l_v:
        raise ShapeError(
            f"target_mel rows {mel.shape[0]} != n * L_v = {inst.n * l_v}"
        )


def make_dub_instance(
    l_t: int,
    d: int,
    n: int,
    noise: float,
    seed: int,
    vocab: int = 32,
    style_dim: int = 8,
    max_duration: int = 6,
) -> DubInstance:
    """Generate one instance; lip frames are prototypes plus isotropic noise.

    The target mel holds the planted prototype rows upsampled to mel
    resolution, shifted by a constant so most entries sit above zero
    (keeps the log-cepstra informative), plus smooth low-amplitude noise.
    """
    if l_t < 1:
        raise ConfigError(f"need at least one phoneme, got l_t={l_t}")
    if l_t > vocab:
        raise ConfigError(f"l_t={l_t} exceeds vocab={vocab}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = Rng(seed)
    ids = np.empty(l_t, dtype=np.int64)
    ids[0] = rng.integer(0, vocab)
    for k in range(1, l_t):
        nxt = rng.integer(0, vocab - 1)
        if nxt >= ids[k - 1]:
            nxt += 1  # skip the previous id so adjacent prototypes differ
        ids[k] = nxt
    durations = rng.integers(1, max_duration + 1, l_t)
    table = init_phoneme_embedding(vocab, d, Rng(subseed(seed, "phoneme-table")))
    z_p = embed_phonemes(table, ids)
    labels = align.frame_labels(align.positives_from_durations(durations))
    l_v = int(durations.sum())
    z_m = z_p[labels] + noise * rng.normal_matrix(l_v, d)
    s_llm = rng.normal_matrix(l_t + 2, d)
    style = rng.normals(style_dim)
    coarse = rng.normal_matrix(l_v, d)
    fine = rng.normal_matrix(n * l_v, d)
    target_mel = (
        np.repeat(z_p[labels], n, axis=0)
        + 1.25
        + 0.05 * np.repeat(coarse, n, axis=0)
        + 0.01 * fine
    )
    inst = DubInstance(
        phoneme_ids=ids,
        durations=durations,
        z_m=ensure_finite("z_m", z_m),
        z_p=z_p,
        s_llm=s_llm,
        style=style,
        target_mel=ensure_finite("target_mel", target_mel),
        n=n,
        seed=seed,
        vocab=vocab,
        noise=noise,
    )
    validate_instance(inst)
    return inst


_TENSOR_FIELDS = ("z_m", "z_p", "s_llm", "target_mel")


def save_instance(directory, inst: DubInstance, stem: str = "instance") -> Path:
    """Write instance.json plus one FDT1 file per tensor; returns the JSON path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for field in _TENSOR_FIELDS:
        fname = f"{stem}_{field}.fdt"
        save_tensor(directory / fname, getattr(inst, field))
        tensors[field] = fname
    doc = {
        "phoneme_ids": inst.phoneme_ids.tolist(),
        "durations": inst.durations.tolist(),
        "style": inst.style.tolist(),
        "n": inst.n,
        "seed": inst.seed,
        "vocab": inst.vocab,
        "noise": inst.noise,
        "tensors": tensors,
    }
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_instance(json_path) -> DubInstance:
    json_path = Path(json_path)
    try:
        doc = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read instance file {json_path}: {exc}") from exc
    try:
        tensors = {
            field: load_tensor(json_path.parent / doc["tensors"][field])
            for field in _TENSOR_FIELDS
        }
        inst = DubInstance(
            phoneme_ids=np.asarray(doc["phoneme_ids"], dtype=np.int64),
            durations=np.asarray(doc["durations"], dtype=np.int64),
            z_m=tensors["z_m"],
            z_p=tensors["z_p"],
            s_llm=tensors["s_llm"],
            style=np.asarray(doc["style"], dtype=np.float64),
            target_mel=tensors["target_mel"],
            n=int(doc["n"]),
            seed=int(doc["seed"]),
            vocab=int(doc["vocab"]),
            noise=float(doc["noise"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{json_path}: missing instance field {exc}") from exc
    validate_instance(inst)
    return inst


def mixture2d_spec() -> MixtureSpec:
    return MixtureSpec(
        [
            MixtureComponent(np.array([-1.0, 0.0]), np.array([0.16, 0.16]), 0.5),
            MixtureComponent(np.array([1.0, 0.0]), np.array([0.16, 0.16]), 0.5),
        ]
    )


PRESETS = {
    "mixture2d": {"kind": "mixture"},
    "dub-small": {"kind": "dub", "l_t": 6, "d": 16, "n": 4, "noise": 0.1},
    "dub-paper-dims": {"kind": "dub", "l_t": 10, "d": 256, "n": 4, "noise": 0.1},
}
