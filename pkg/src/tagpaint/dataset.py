"""Dataset builder and loader: sprite corpus on disk with exact tag labels.

Directory layout::

    out_dir/
      manifest.json     # files, vocabulary hash, seed, split
      vocab.txt         # the vocabulary manifest the corpus was built with
      img/{id}.png      # RGB color image
      mask/{id}.png     # single-channel indexed region labels
      tags/{id}.txt     # one tag name per line (color and shape tags)

The manifest is written last, so a directory without one is invalid.
Loaders refuse unknown manifest versions and vocabulary hash mismatches.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import lineart, sprites
from .vocab import TagKind, TagVector, TagVocabulary, encode_tags, load_vocabulary

MANIFEST_FORMAT_VERSION = 1

_MASK_PALETTE = [
    255, 255, 255,   # background
    120, 60, 180,    # hair
    30, 30, 30,      # eyes
    60, 120, 200,    # garment
    250, 220, 190,   # skin
]


@dataclass(frozen=True)
class RecordEntry:
    id: str
    img: str
    mask: str
    tags: str
    split: str
    geometry_seed: int


@dataclass(frozen=True)
class DatasetManifest:
    format_version: int
    n: int
    size: int
    seed: int
    vocab_sha256: str
    records: tuple[RecordEntry, ...]

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "n": self.n,
            "size": self.size,
            "seed": self.seed,
            "vocab_sha256": self.vocab_sha256,
            "records": [vars(r) for r in self.records],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        doc = json.loads(text)
        version = doc.get("format_version")
        if version != MANIFEST_FORMAT_VERSION:
            raise ValueError(f"unsupported dataset manifest version {version!r}")
        records = tuple(RecordEntry(**r) for r in doc["records"])
        return DatasetManifest(format_version=version, n=doc["n"],
                               size=doc["size"], seed=doc["seed"],
                               vocab_sha256=doc["vocab_sha256"],
                               records=records)


@dataclass
class SampleRecord:
    """Paired training unit: line art, color target, tag vectors, masks."""

    id: str
    line_art: np.ndarray
    color_image: np.ndarray
    cvt: TagVector
    cit: TagVector
    masks: np.ndarray
    spec: sprites.SpriteSpec


def record_seed(seed: int, index: int) -> int:
    """Per-record RNG seed derived from the corpus seed and record index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def assign_splits(ids: list[str], seed: int) -> dict[str, str]:
    """Deterministic 90/10 split: rank ids by a seeded hash, bottom 10% test."""
    ranked = sorted(ids, key=lambda i: hashlib.sha256(
        f"{seed}:{i}".encode()).hexdigest())
    n_test = len(ids) // 10
    test = set(ranked[:n_test])
    return {i: ("test" if i in test else "train") for i in ids}


def build_dataset(n: int, size: int, seed: int, out_dir: str | Path,
                  vocab: TagVocabulary | None = None) -> DatasetManifest:
    """Render and write n sprite records plus a manifest. Deterministic."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    vocab = vocab or default_vocab()
    out = Path(out_dir)
    for sub in ("img", "mask", "tags"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest_path.unlink()  # invalidate until rebuild completes

    ids = [f"{i:05d}" for i in range(n)]
    splits = assign_splits(ids, seed)
    entries = []
    try:
        for i, rec_id in enumerate(ids):
            spec = sprites.sample_spec(record_seed(seed, i), vocab)
            color, masks = sprites.render_sprite(spec, size, vocab)
            img8 = np.clip(np.round(color * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(img8, mode="RGB").save(out / "img" / f"{rec_id}.png")
            mask_img = Image.fromarray(masks, mode="P")
            mask_img.putpalette(_MASK_PALETTE)
            mask_img.save(out / "mask" / f"{rec_id}.png")
            tag_lines = ([spec.hair_color, spec.eye_color, spec.garment_color]
                         + [t for t in vocab.cit_names if t in spec.cit_attrs])
            (out / "tags" / f"{rec_id}.txt").write_text(
                "\n".join(tag_lines) + "\n")
            entries.append(RecordEntry(
                id=rec_id, img=f"img/{rec_id}.png", mask=f"mask/{rec_id}.png",
                tags=f"tags/{rec_id}.txt", split=splits[rec_id],
                geometry_seed=spec.geometry_seed))
    except Exception:
        if manifest_path.exists():
            manifest_path.unlink()
        raise

    vocab.save(out / "vocab.txt")
    manifest = DatasetManifest(format_version=MANIFEST_FORMAT_VERSION, n=n,
                               size=size, seed=seed,
                               vocab_sha256=vocab.sha256(),
                               records=tuple(entries))
    manifest_path.write_text(manifest.to_json())
    return manifest


def default_vocab() -> TagVocabulary:
    from .vocab import default_vocabulary
    return default_vocabulary()


class LoadedDataset:
    """Read access to a built corpus, validated against a vocabulary."""

    def __init__(self, root: str | Path, vocab: TagVocabulary | None = None):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
        self.manifest = DatasetManifest.from_json(manifest_path.read_text())
        if vocab is None:
            vocab = load_vocabulary(self.root / "vocab.txt")
        if vocab.sha256() != self.manifest.vocab_sha256:
            raise ValueError(
                "vocabulary hash mismatch: dataset was built with "
                f"{self.manifest.vocab_sha256[:12]}..., got {vocab.sha256()[:12]}...")
        self.vocab = vocab
        self._by_id = {r.id: r for r in self.manifest.records}

    @property
    def size(self) -> int:
        return self.manifest.size

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return [r.id for r in self.manifest.records]
        return [r.id for r in self.manifest.records if r.split == split]

    def load_color(self, rec_id: str) -> np.ndarray:
        entry = self._by_id[rec_id]
        img = Image.open(self.root / entry.img).convert("RGB")
        return np.asarray(img, dtype=np.float32) / 255.0

    def load_mask(self, rec_id: str) -> np.ndarray:
        entry = self._by_id[rec_id]
        return np.asarray(Image.open(self.root / entry.mask), dtype=np.uint8)

    def load_tags(self, rec_id: str) -> list[str]:
        entry = self._by_id[rec_id]
        text = (self.root / entry.tags).read_text()
        return [ln for ln in text.splitlines() if ln]

    def spec_for(self, rec_id: str) -> sprites.SpriteSpec:
        tags = self.load_tags(rec_id)
        colors = {}
        attrs = set()
        for tag in tags:
            if tag in self.vocab.cvt_index:
                colors[self.vocab.cvt_categories[tag]] = tag
            else:
                attrs.add(tag)
        return sprites.SpriteSpec(
            hair_color=colors["hair"], eye_color=colors["eye"],
            garment_color=colors["garment"], cit_attrs=frozenset(attrs),
            geometry_seed=self._by_id[rec_id].geometry_seed)

    def record(self, rec_id: str,
               xdog_params: lineart.XdogParams | None = None) -> SampleRecord:
        """Load one record; the line art is extracted on the fly."""
        color = self.load_color(rec_id)
        masks = self.load_mask(rec_id)
        spec = self.spec_for(rec_id)
        params = xdog_params or lineart.sprite_default(self.size)
        la = lineart.extract_lineart(color, params).astype(np.float32)
        cvt = encode_tags(spec.cvt_tags(), self.vocab, TagKind.CVT)
        cit = encode_tags(set(spec.cit_attrs), self.vocab, TagKind.CIT)
        return SampleRecord(id=rec_id, line_art=la, color_image=color,
                            cvt=cvt, cit=cit, masks=masks, spec=spec)
