"""Tag vocabulary: the conditioning alphabet shared by every other module.

Two tag families exist. Color tags (one per region category: hair, eye,
garment) carry a canonical RGB used for rendering and for the color metrics.
Shape tags (hat, ribbon, ...) describe geometry and carry no color.

The vocabulary is stored as a versioned text manifest, one tag per line,
with ``[cvt]`` / ``[cit]`` section headers. Color tag lines append the
category and canonical RGB. The manifest is the unit of identity: its
SHA-256 is embedded in datasets and checkpoints, and loaders refuse to mix
artifacts built against different vocabularies.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1

CATEGORIES = ("hair", "eye", "garment")


class TagKind(str, Enum):
    CVT = "cvt"
    CIT = "cit"


class UnknownTagError(ValueError):
    """A tag name absent from the vocabulary. Carries the offending name."""

    def __init__(self, tag: str, kind: TagKind):
        self.tag = tag
        self.kind = kind
        super().__init__(f"unknown {kind.value} tag: {tag!r}")


@dataclass(frozen=True)
class TagVocabulary:
    """Ordered color-tag and shape-tag symbol tables with index maps."""

    cvt_names: tuple[str, ...]
    cit_names: tuple[str, ...]
    cvt_categories: dict[str, str]
    cvt_colors: dict[str, tuple[float, float, float]]
    version: int = MANIFEST_VERSION
    cvt_index: dict[str, int] = field(init=False)
    cit_index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if len(set(self.cvt_names)) != len(self.cvt_names):
            raise ValueError("duplicate cvt names")
        if len(set(self.cit_names)) != len(self.cit_names):
            raise ValueError("duplicate cit names")
        if set(self.cvt_names) & set(self.cit_names):
            raise ValueError("cvt and cit name sets overlap")
        for name in self.cvt_names:
            if name not in self.cvt_categories:
                raise ValueError(f"cvt {name!r} has no category")
            if self.cvt_categories[name] not in CATEGORIES:
                raise ValueError(f"cvt {name!r} has unknown category "
                                 f"{self.cvt_categories[name]!r}")
            if name not in self.cvt_colors:
                raise ValueError(f"cvt {name!r} has no canonical color")
            rgb = self.cvt_colors[name]
            if len(rgb) != 3 or not all(0.0 <= c <= 1.0 for c in rgb):
                raise ValueError(f"cvt {name!r} color out of [0,1]: {rgb}")
        object.__setattr__(self, "cvt_index",
                           {n: i for i, n in enumerate(self.cvt_names)})
        object.__setattr__(self, "cit_index",
                           {n: i for i, n in enumerate(self.cit_names)})

    def names(self, kind: TagKind) -> tuple[str, ...]:
        return self.cvt_names if kind is TagKind.CVT else self.cit_names

    def index(self, kind: TagKind) -> dict[str, int]:
        return self.cvt_index if kind is TagKind.CVT else self.cit_index

    def size(self, kind: TagKind) -> int:
        return len(self.names(kind))

    @property
    def cvt_count(self) -> int:
        return len(self.cvt_names)

    @property
    def cit_count(self) -> int:
        return len(self.cit_names)

    def category_names(self, category: str) -> tuple[str, ...]:
        """Color tags of one region category, in vocabulary order."""
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        return tuple(n for n in self.cvt_names
                     if self.cvt_categories[n] == category)

    def color_of(self, name: str) -> np.ndarray:
        if name not in self.cvt_colors:
            raise UnknownTagError(name, TagKind.CVT)
        return np.asarray(self.cvt_colors[name], dtype=np.float64)

    def color_table(self) -> np.ndarray:
        """Canonical RGB rows in cvt order, shape (cvt_count, 3)."""
        return np.stack([self.color_of(n) for n in self.cvt_names])

    # -- manifest serialization ------------------------------------------

    def to_manifest(self) -> str:
        lines = [f"version {self.version}", "[cvt]"]
        for name in self.cvt_names:
            r, g, b = self.cvt_colors[name]
            cat = self.cvt_categories[name]
            lines.append(f"{name} {cat} {r:.4f} {g:.4f} {b:.4f}")
        lines.append("[cit]")
        lines.extend(self.cit_names)
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_manifest())

    def sha256(self) -> str:
        return hashlib.sha256(self.to_manifest().encode()).hexdigest()


def parse_manifest(text: str) -> TagVocabulary:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("version "):
        raise ValueError("manifest missing version header")
    version = int(lines[0].split()[1])
    if version != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {version}")
    section = None
    cvt_names: list[str] = []
    cit_names: list[str] = []
    categories: dict[str, str] = {}
    colors: dict[str, tuple[float, float, float]] = {}
    for ln in lines[1:]:
        if ln in ("[cvt]", "[cit]"):
            section = ln[1:-1]
            continue
        if section == "cvt":
            parts = ln.split()
            if len(parts) != 5:
                raise ValueError(f"bad cvt line: {ln!r}")
            name, cat = parts[0], parts[1]
            rgb = tuple(float(v) for v in parts[2:])
            cvt_names.append(name)
            categories[name] = cat
            colors[name] = rgb  # type: ignore[assignment]
        elif section == "cit":
            cit_names.append(ln)
        else:
            raise ValueError(f"line outside any section: {ln!r}")
    return TagVocabulary(tuple(cvt_names), tuple(cit_names),
                         categories, colors, version=version)


def load_vocabulary(path: str | Path) -> TagVocabulary:
    return parse_manifest(Path(path).read_text())


def default_vocabulary() -> TagVocabulary:
    """Desk-scale vocabulary: 12 color tags (4 per category), 6 shape tags.

    Color words are disjoint across categories so that per-pixel
    nearest-color assignment is unambiguous.
    """
    cvt = [
        ("blue_hair", "hair", (0.25, 0.35, 0.85)),
        ("red_hair", "hair", (0.85, 0.20, 0.20)),
        ("blonde_hair", "hair", (0.93, 0.78, 0.35)),
        ("green_hair", "hair", (0.20, 0.70, 0.35)),
        ("purple_eyes", "eye", (0.55, 0.25, 0.75)),
        ("aqua_eyes", "eye", (0.25, 0.80, 0.80)),
        ("amber_eyes", "eye", (0.90, 0.60, 0.15)),
        ("crimson_eyes", "eye", (0.70, 0.10, 0.30)),
        ("navy_skirt", "garment", (0.15, 0.20, 0.50)),
        ("pink_skirt", "garment", (0.95, 0.55, 0.75)),
        ("olive_skirt", "garment", (0.45, 0.55, 0.15)),
        ("gray_skirt", "garment", (0.55, 0.55, 0.60)),
    ]
    cit = ("hat", "ribbon", "twintails", "short_hair", "skirt", "open_mouth")
    return TagVocabulary(
        cvt_names=tuple(name for name, _, _ in cvt),
        cit_names=cit,
        cvt_categories={name: cat for name, cat, _ in cvt},
        cvt_colors={name: rgb for name, _, rgb in cvt},
    )


@dataclass(frozen=True)
class TagVector:
    """Dense 0/1 encoding of a tag set against one vocabulary kind."""

    values: np.ndarray
    kind: TagKind

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 1:
            raise ValueError("tag vector must be 1-D")
        if not np.all((vals == 0) | (vals == 1)):
            raise ValueError("tag vector entries must be 0 or 1")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def encode_tags(tags: set[str] | frozenset[str] | list[str],
                vocab: TagVocabulary, kind: TagKind) -> TagVector:
    """Multi-hot encode a tag set; rejects names outside the vocabulary."""
    index = vocab.index(kind)
    values = np.zeros(vocab.size(kind), dtype=np.float32)
    for tag in tags:
        if tag not in index:
            raise UnknownTagError(tag, kind)
        values[index[tag]] = 1.0
    return TagVector(values, kind)


def decode_tags(vec: TagVector, vocab: TagVocabulary) -> set[str]:
    """Exact inverse of :func:`encode_tags`."""
    names = vocab.names(vec.kind)
    if len(vec) != len(names):
        raise ValueError(f"tag vector length {len(vec)} does not match "
                         f"{vec.kind.value} vocabulary size {len(names)}")
    return {names[i] for i in np.flatnonzero(vec.values)}
