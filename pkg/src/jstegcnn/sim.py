"""Desk-scale data: a +-1 coefficient perturbation simulator and synthetic corpora.

The simulator is a stand-in for real content-adaptive embedding; it is not
J-UNIWARD and has no coding-theoretic payload.  ``payload_bpnzAC`` is carried
as metadata only.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import JpegPlane, compress, quality_qtable, write_jcf
from .manifest import DatasetManifest, PairRecord, write_manifest


@dataclass(frozen=True)
class SimConfig:
    change_rate: float = 0.4
    payload_bpnzAC: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.change_rate <= 1.0:
            raise ValueError(f"change_rate must be in [0, 1], got {self.change_rate}")


def simulate_stego(plane: JpegPlane, cfg: SimConfig, rng: np.random.Generator | None = None) -> JpegPlane:
    """Add +-1 to ``floor(change_rate * #nonzero AC)`` nonzero AC coefficients."""
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    coeffs = plane.coeffs.copy()
    flat = coeffs.reshape(-1)
    candidates = np.flatnonzero((plane.coeffs != 0) & plane.ac_mask())
    n_change = int(np.floor(cfg.change_rate * candidates.size))
    chosen = rng.choice(candidates, size=n_change, replace=False) if n_change else candidates[:0]
    signs = rng.choice(np.array([-1, 1], dtype=np.int16), size=n_change)
    flat[chosen] += signs
    return JpegPlane(plane.width, plane.height, coeffs, plane.qtable.copy(), plane.quality_factor)


def _smooth3(a: np.ndarray, axis: int) -> np.ndarray:
    p = [(0, 0)] * a.ndim
    p[axis] = (1, 1)
    ap = np.pad(a, p, mode="reflect")
    n = a.shape[axis]
    take = lambda s: np.take(ap, np.arange(s, s + n), axis=axis)  # noqa: E731
    return (take(0) + 2 * take(1) + take(2)) / 4.0


def synthetic_cover(size: int, rng: np.random.Generator) -> np.ndarray:
    """Separably smoothed uniform noise, rescaled and rounded to 0..255."""
    x = rng.uniform(0.0, 1.0, size=(size, size))
    x = _smooth3(_smooth3(x, 0), 1)
    x = (x - x.min()) / max(x.max() - x.min(), 1e-12)
    return np.round(255.0 * x)


def _split_sizes(n_pairs, splits):
    names = [s for s, _ in splits]
    fracs = np.array([f for _, f in splits], dtype=float)
    if all(float(f).is_integer() and f >= 1 for f in fracs):
        counts = fracs.astype(int)
        if counts.sum() != n_pairs:
            raise ValueError(f"split counts {counts.tolist()} do not add up to {n_pairs}")
    else:
        counts = np.floor(fracs / fracs.sum() * n_pairs).astype(int)
        counts[0] += n_pairs - counts.sum()
    return list(zip(names, counts.tolist()))


def make_synthetic_corpus(out_dir, n_pairs: int, image_size: int, cfg: SimConfig,
                          quality: int = 75,
                          splits=(("train", 0.5), ("val", 0.25), ("test", 0.25))) -> dict[str, DatasetManifest]:
    """Write ``2 * n_pairs`` JCF files plus one manifest per split.

    ``splits`` holds ``(name, fraction)`` or ``(name, count)`` entries; pairs are
    assigned to splits in a seed-determined random order.
    """
    if image_size % 16:
        raise ValueError(f"image_size must be divisible by 16, got {image_size}")
    out = Path(out_dir)
    (out / "cover").mkdir(parents=True, exist_ok=True)
    (out / "stego").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.rng_seed)
    qtable = quality_qtable(quality)

    records = []
    for i in range(n_pairs):
        cover = compress(synthetic_cover(image_size, rng), qtable, quality)
        stego = simulate_stego(cover, cfg, rng)
        cpath, spath = out / "cover" / f"{i:05d}.jcf", out / "stego" / f"{i:05d}.jcf"
        write_jcf(cpath, cover)
        write_jcf(spath, stego)
        records.append(PairRecord(f"{i:05d}", str(cpath.relative_to(out)), str(spath.relative_to(out))))

    order = rng.permutation(n_pairs)
    manifests = {}
    start = 0
    for name, count in _split_sizes(n_pairs, splits):
        chosen = sorted(order[start:start + count].tolist())
        start += count
        m = DatasetManifest([records[j] for j in chosen], quality_factor=quality,
                            embedding_rate=cfg.payload_bpnzAC, split=name, root=out)
        write_manifest(out / f"{name}.tsv", m)
        manifests[name] = m
    return manifests
