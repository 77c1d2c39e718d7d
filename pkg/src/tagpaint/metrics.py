"""Quantitative evaluation: Fréchet feature distance over a pluggable
extractor, plus mask-based tag-fidelity and color-bleed scores.

The exact region masks of the synthetic corpus make color placement
machine-checkable: tag fidelity asks whether each region's mean color is
nearest (within its category's palette) to the requested color; color
bleed measures how many small-region pixels the hair color captured.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image

from . import lineart
from .networks import CitTrunk
from .sprites import CATEGORY_LABELS, LABEL_EYES, LABEL_GARMENT, SpriteSpec
from .vocab import TagVocabulary

EIG_CLIP = 1e-6  # tiny negative eigenvalues clipped; beyond this is an error


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian fit of a feature cloud: mean, covariance (n-1), count."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ValueError("inconsistent feature stats dimensions")
        if not np.allclose(sigma, sigma.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")
        eigs = np.linalg.eigvalsh(sigma)
        tol = 1e-8 * max(1.0, float(np.abs(eigs).max(initial=0.0)))
        if eigs.min(initial=0.0) < -tol:
            raise ValueError(f"covariance not PSD (min eigenvalue {eigs.min()})")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


def feature_stats(images: Sequence[np.ndarray] | np.ndarray,
                  extractor: Callable[[Sequence[np.ndarray]], np.ndarray]) -> FeatureStats:
    """Empirical mean/covariance of extracted features (n-1 denominator)."""
    if len(images) < 2:
        raise ValueError("need at least 2 images for feature statistics")
    feats = np.asarray(extractor(images), dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("extractor must return an (n, d) matrix")
    mu = feats.mean(axis=0)
    sigma = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    return FeatureStats(mu=mu, sigma=sigma, n=feats.shape[0])


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(matrix)
    if w.min(initial=0.0) < -EIG_CLIP:
        raise ValueError(f"matrix not PSD within tolerance (min eig {w.min()})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a-mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The matrix square root is taken through the symmetrized product
    R S_b R with R = S_a^(1/2), whose eigenvalues are those of S_a S_b.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError("feature dimensions differ")
    diff = a.mu - b.mu
    root_a = _psd_sqrt(a.sigma)
    inner = root_a @ b.sigma @ root_a
    inner = (inner + inner.T) / 2.0
    w = np.linalg.eigvalsh(inner)
    if w.min(initial=0.0) < -EIG_CLIP:
        raise ValueError(f"product matrix not PSD within tolerance (min eig {w.min()})")
    trace_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    fd = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma)
               - 2.0 * trace_sqrt)
    return max(fd, 0.0)


class TrunkFeatureExtractor:
    """Pools the pretrained shape-tag trunk into one vector per image.

    Accepts RGB or grayscale images in [0,1]; RGB is reduced to luminance
    and resized to the trunk's input size before extraction.
    """

    def __init__(self, trunk: CitTrunk, image_size: int, batch_size: int = 32):
        self.trunk = trunk
        self.image_size = image_size
        self.batch_size = batch_size
        self.trunk.eval()

    @property
    def feature_dim(self) -> int:
        return self.trunk.stage3.conv2.out_channels

    def _prepare(self, img: np.ndarray) -> np.ndarray:
        arr = np.asarray(img, dtype=np.float64)
        if arr.ndim == 3:
            arr = lineart.grayscale(arr)
        if arr.shape != (self.image_size, self.image_size):
            pil = Image.fromarray(np.clip(arr * 255, 0, 255).astype(np.uint8))
            pil = pil.resize((self.image_size, self.image_size),
                             Image.Resampling.BILINEAR)
            arr = np.asarray(pil, dtype=np.float64) / 255.0
        return arr

    def __call__(self, images: Sequence[np.ndarray]) -> np.ndarray:
        out = []
        with torch.no_grad():
            for i in range(0, len(images), self.batch_size):
                chunk = [self._prepare(im) for im in images[i:i + self.batch_size]]
                batch = torch.from_numpy(np.stack(chunk)[:, None]).float()
                feats = self.trunk(batch).mean(dim=(2, 3))
                out.append(feats.double().numpy())
        return np.concatenate(out, axis=0)


def _load_image_dir(path: Path) -> list[np.ndarray]:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"no PNG images in {path}")
    return [np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
            for p in files]


def fid_toy(generated, reference, extractor) -> float:
    """Fréchet distance between the two image sets' feature Gaussians."""
    if isinstance(generated, (str, Path)):
        generated = _load_image_dir(Path(generated))
    if isinstance(reference, (str, Path)):
        reference = _load_image_dir(Path(reference))
    return frechet_distance(feature_stats(generated, extractor),
                            feature_stats(reference, extractor))


def nearest_color_index(values: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Index of the closest table row per value; ties pick the lowest index."""
    d2 = ((values[..., None, :] - table) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=-1)


def tag_fidelity(images: Sequence[np.ndarray], specs: Sequence[SpriteSpec],
                 masks: Sequence[np.ndarray], vocab: TagVocabulary) -> float:
    """Fraction of (image, region) pairs whose mean color lands nearest
    to the requested tag within that region category's palette."""
    if not (len(images) == len(specs) == len(masks)):
        raise ValueError("images, specs and masks must align")
    hits = 0
    total = 0
    palettes = {
        cat: (vocab.category_names(cat),
              np.stack([vocab.color_of(n) for n in vocab.category_names(cat)]))
        for cat in CATEGORY_LABELS
    }
    for img, spec, mask in zip(images, specs, masks):
        if mask is None:
            raise ValueError("missing region masks")
        for cat, label in CATEGORY_LABELS.items():
            sel = mask == label
            if not sel.any():
                continue
            mean = np.asarray(img, dtype=np.float64)[sel].mean(axis=0)
            names, table = palettes[cat]
            nearest = names[int(nearest_color_index(mean, table))]
            hits += int(nearest == spec.color_for_category(cat))
            total += 1
    if total == 0:
        raise ValueError("no regions to score")
    return hits / total


def color_bleed(images: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                vocab: TagVocabulary, specs: Sequence[SpriteSpec]) -> float:
    """Fraction of eye/garment pixels whose nearest canonical color (over
    the full color table) is the requested hair color. Lower is better."""
    if not (len(images) == len(specs) == len(masks)):
        raise ValueError("images, specs and masks must align")
    table = vocab.color_table()
    bleed = 0
    total = 0
    for img, spec, mask in zip(images, specs, masks):
        if mask is None:
            raise ValueError("missing region masks")
        sel = (mask == LABEL_EYES) | (mask == LABEL_GARMENT)
        if not sel.any():
            continue
        pix = np.asarray(img, dtype=np.float64)[sel]
        idx = nearest_color_index(pix, table)
        hair_idx = vocab.cvt_index[spec.hair_color]
        bleed += int((idx == hair_idx).sum())
        total += int(sel.sum())
    if total == 0:
        raise ValueError("no eye/garment pixels to score")
    return bleed / total
