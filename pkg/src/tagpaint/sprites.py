"""Procedural character sprites with exact per-region color ground truth.

Each sprite is a layered 2-D composition (hair, head, torso, eyes, optional
hat/ribbon/...) drawn into a label image and a color image simultaneously,
so the region masks partition the frame by construction and every colored
region is a flat fill (plus a mild shading band) of its tag's canonical RGB.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import TagKind, TagVocabulary, encode_tags

LABEL_BACKGROUND = 0
LABEL_HAIR = 1
LABEL_EYES = 2
LABEL_GARMENT = 3
LABEL_SKIN = 4

LABEL_NAMES = ("background", "hair", "eyes", "garment", "skin")

# label of the region each color-tag category paints
CATEGORY_LABELS = {"hair": LABEL_HAIR, "eye": LABEL_EYES,
                   "garment": LABEL_GARMENT}

SKIN_RGB = (0.98, 0.88, 0.80)
MOUTH_RGB = (0.45, 0.15, 0.18)

SUPPORTED_SIZES = (64, 128, 256)

SHADE_FACTOR = 0.90  # keeps region mean within 0.03 of the flat fill


@dataclass(frozen=True)
class SpriteSpec:
    """One sprite: a color tag per region plus shape attributes."""

    hair_color: str
    eye_color: str
    garment_color: str
    cit_attrs: frozenset[str]
    geometry_seed: int

    def color_for_category(self, category: str) -> str:
        return {"hair": self.hair_color, "eye": self.eye_color,
                "garment": self.garment_color}[category]

    def cvt_tags(self) -> set[str]:
        return {self.hair_color, self.eye_color, self.garment_color}


def sample_spec(seed: int, vocab: TagVocabulary) -> SpriteSpec:
    """Draw a sprite spec: colors uniform per category, shape tags at p=0.5.

    Deterministic in ``seed``.
    """
    rng = np.random.default_rng(seed)
    colors = {}
    for category in ("hair", "eye", "garment"):
        options = vocab.category_names(category)
        if not options:
            raise ValueError(f"vocabulary has no color tags for {category!r}")
        colors[category] = str(options[rng.integers(len(options))])
    attrs = frozenset(name for name in vocab.cit_names if rng.random() < 0.5)
    return SpriteSpec(hair_color=colors["hair"], eye_color=colors["eye"],
                      garment_color=colors["garment"], cit_attrs=attrs,
                      geometry_seed=int(rng.integers(2**31 - 1)))


def spec_tag_vectors(spec: SpriteSpec, vocab: TagVocabulary):
    cvt = encode_tags(spec.cvt_tags(), vocab, TagKind.CVT)
    cit = encode_tags(set(spec.cit_attrs), vocab, TagKind.CIT)
    return cvt, cit


class _Canvas:
    def __init__(self, size: int):
        ys, xs = np.mgrid[0:size, 0:size]
        self.u = (xs + 0.5) / size
        self.v = (ys + 0.5) / size
        self.labels = np.full((size, size), LABEL_BACKGROUND, dtype=np.uint8)
        self.color = np.ones((size, size, 3), dtype=np.float64)

    def paint(self, region: np.ndarray, label: int, rgb) -> None:
        self.labels[region] = label
        self.color[region] = np.asarray(rgb, dtype=np.float64)

    def ellipse(self, cx, cy, rx, ry) -> np.ndarray:
        return ((self.u - cx) / rx) ** 2 + ((self.v - cy) / ry) ** 2 <= 1.0

    def rect(self, x0, y0, x1, y1) -> np.ndarray:
        return (self.u >= x0) & (self.u <= x1) & (self.v >= y0) & (self.v <= y1)

    def trapezoid(self, cx, y0, y1, half_top, half_bottom) -> np.ndarray:
        t = np.clip((self.v - y0) / max(y1 - y0, 1e-9), 0.0, 1.0)
        half = half_top + (half_bottom - half_top) * t
        return (np.abs(self.u - cx) <= half) & (self.v >= y0) & (self.v <= y1)

    def triangle(self, cx, y_apex, y_base, half_base) -> np.ndarray:
        t = np.clip((self.v - y_apex) / max(y_base - y_apex, 1e-9), 0.0, 1.0)
        return ((np.abs(self.u - cx) <= half_base * t)
                & (self.v >= y_apex) & (self.v <= y_base))


def _shade_band(canvas: _Canvas, label: int, fraction: float = 0.30) -> None:
    """Darken the bottom `fraction` of rows of a region by SHADE_FACTOR."""
    region = canvas.labels == label
    rows = np.flatnonzero(region.any(axis=1))
    if len(rows) < 4:
        return
    cut = rows[int(np.ceil(len(rows) * (1.0 - fraction)))]
    band = region & (np.arange(region.shape[0])[:, None] >= cut)
    canvas.color[band] *= SHADE_FACTOR


def render_sprite(spec: SpriteSpec, size: int,
                  vocab: TagVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a sprite; returns (color image in [0,1], label masks).

    Later layers overwrite earlier ones, so every pixel carries exactly
    one label.
    """
    if size not in SUPPORTED_SIZES:
        raise ValueError(f"unsupported size {size}; expected one of "
                         f"{SUPPORTED_SIZES}")
    rng = np.random.default_rng(spec.geometry_seed)
    jit = lambda lo, hi: float(rng.uniform(lo, hi))

    hair_rgb = vocab.color_of(spec.hair_color)
    eye_rgb = vocab.color_of(spec.eye_color)
    garment_rgb = vocab.color_of(spec.garment_color)
    attrs = spec.cit_attrs

    c = _Canvas(size)

    hcx = 0.5 + jit(-0.012, 0.012)
    hcy = 0.40 + jit(-0.015, 0.015)
    hr = 0.16 * (1.0 + jit(-0.08, 0.08))

    # hair behind the head, plus length below unless short
    hair_back = c.ellipse(hcx, hcy - 0.05 * hr, 1.30 * hr, 1.30 * hr)
    hair_len = hcy + (1.1 if "short_hair" in attrs else 2.8) * hr
    hair_back |= c.rect(hcx - 1.22 * hr, hcy - 0.2 * hr,
                        hcx + 1.22 * hr, hair_len)
    if "twintails" in attrs:
        tail_ry = (0.9 if "short_hair" in attrs else 1.5) * hr
        for sx in (-1.0, 1.0):
            hair_back |= c.ellipse(hcx + sx * 1.62 * hr, hcy + 0.8 * hr,
                                   0.42 * hr, tail_ry)
    c.paint(hair_back, LABEL_HAIR, hair_rgb)

    # skin: head and neck
    c.paint(c.ellipse(hcx, hcy, hr, hr), LABEL_SKIN, SKIN_RGB)
    neck_top = hcy + 0.8 * hr
    torso_top = hcy + 1.15 * hr
    c.paint(c.rect(hcx - 0.3 * hr, neck_top, hcx + 0.3 * hr, torso_top + 0.02),
            LABEL_SKIN, SKIN_RGB)

    # torso garment; skirt attribute flares the lower half
    torso_bottom = 0.96
    half_w = 0.14 * (1.0 + jit(-0.10, 0.10))
    if "skirt" in attrs:
        waist = torso_top + 0.40 * (torso_bottom - torso_top)
        torso = c.trapezoid(hcx, torso_top, waist, half_w, half_w)
        torso |= c.trapezoid(hcx, waist, torso_bottom, half_w, 1.9 * half_w)
    else:
        torso = c.trapezoid(hcx, torso_top, torso_bottom, half_w, half_w)
    c.paint(torso, LABEL_GARMENT, garment_rgb)

    # bangs over the forehead
    bangs = c.ellipse(hcx, hcy - 0.25 * hr, 1.12 * hr, 0.95 * hr)
    bangs &= c.v <= hcy - 0.15 * hr
    c.paint(bangs, LABEL_HAIR, hair_rgb)

    # eyes
    eye_dx = 0.45 * hr
    eye_rx = 0.26 * hr * (1.0 + jit(-0.10, 0.10))
    eye_ry = 0.30 * hr * (1.0 + jit(-0.10, 0.10))
    eyes = (c.ellipse(hcx - eye_dx, hcy + 0.18 * hr, eye_rx, eye_ry)
            | c.ellipse(hcx + eye_dx, hcy + 0.18 * hr, eye_rx, eye_ry))
    c.paint(eyes, LABEL_EYES, eye_rgb)

    if "open_mouth" in attrs:
        mouth = c.ellipse(hcx, hcy + 0.62 * hr, 0.20 * hr, 0.14 * hr)
        c.paint(mouth, LABEL_SKIN, MOUTH_RGB)

    if "hat" in attrs:
        hat = c.triangle(hcx, hcy - 2.3 * hr, hcy - 0.85 * hr, 1.05 * hr)
        c.paint(hat, LABEL_GARMENT, garment_rgb)

    if "ribbon" in attrs:
        rib_cx = hcx - 0.95 * hr
        rib_cy = hcy - 0.90 * hr
        ribbon = (c.ellipse(rib_cx - 0.20 * hr, rib_cy, 0.22 * hr, 0.18 * hr)
                  | c.ellipse(rib_cx + 0.20 * hr, rib_cy, 0.22 * hr, 0.18 * hr))
        c.paint(ribbon, LABEL_GARMENT, garment_rgb)

    _shade_band(c, LABEL_HAIR)
    _shade_band(c, LABEL_GARMENT)

    return c.color.astype(np.float32), c.labels


def region_mean_colors(color: np.ndarray, masks: np.ndarray) -> dict[str, np.ndarray]:
    """Mean RGB per non-empty labeled region."""
    out = {}
    for label, name in enumerate(LABEL_NAMES):
        sel = masks == label
        if sel.any():
            out[name] = color[sel].mean(axis=0)
    return out
