"""Synthetic paired region/word benchmarks, the ADDRFEAT file format, and splits.

ADDRFEAT layout (little-endian)::

    magic  8 bytes  b"ADDRFEAT"
    version u32
    count   u64
    count x { id u64, rows u32, dim u32, rows*dim float32 row-major }

The manifest is JSON lines, one image per line:
``{"image": 7, "captions": [35, 36, 37, 38, 39], "split": "train", "concept": 1}``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import IMAGE, TEXT
from .exceptions import FormatError
from .numerics import Rng

FEAT_MAGIC = b"ADDRFEAT"
FEAT_VERSION = 1
_FILE_HEADER = struct.Struct("<8sIQ")
_ITEM_HEADER = struct.Struct("<QII")
SPLITS = ("train", "val", "test")
MAX_ELEMENTS = 1 << 28


@dataclass
class FeatureItem:
    id: int
    modality: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"item {self.id}: features must be a (rows >= 1, dim) matrix")

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Dataset:
    images: list
    sentences: list
    pairs: dict  # image id -> list of caption ids
    split: dict = field(default_factory=dict)  # image id -> split name
    concepts: dict = field(default_factory=dict)  # image id -> concept label, synthetic only
    meta: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._image_by_id = {it.id: it for it in self.images}
        self._sentence_by_id = {it.id: it for it in self.sentences}
        self._caption_owner = {}
        for img, caps in self.pairs.items():
            if img not in self._image_by_id:
                raise ValueError(f"manifest references unknown image {img}")
            for c in caps:
                if c in self._caption_owner:
                    raise ValueError(f"caption {c} is paired with more than one image")
                if c not in self._sentence_by_id:
                    raise ValueError(f"manifest references unknown caption {c}")
                self._caption_owner[c] = img
        for name, items in (("image", self.images), ("sentence", self.sentences)):
            dims = {it.dim for it in items}
            if len(dims) > 1:
                raise ValueError(f"{name} features have inconsistent dims {sorted(dims)}")

    def image(self, image_id) -> FeatureItem:
        return self._image_by_id[image_id]

    def sentence(self, caption_id) -> FeatureItem:
        return self._sentence_by_id[caption_id]

    def image_of(self, caption_id) -> int:
        return self._caption_owner[caption_id]

    @property
    def d_img(self) -> int:
        return self.images[0].dim

    @property
    def d_txt(self) -> int:
        return self.sentences[0].dim

    def image_ids(self, split: str | None = None) -> list:
        ids = sorted(self.pairs)
        if split is None:
            return ids
        return [i for i in ids if self.split.get(i) == split]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for it in self.images + self.sentences:
            h.update(struct.pack("<Q", it.id))
            h.update(np.ascontiguousarray(it.features).tobytes())
        h.update(json.dumps({str(k): v for k, v in sorted(self.pairs.items())}).encode())
        h.update(json.dumps({str(k): v for k, v in sorted(self.split.items())}).encode())
        return h.hexdigest()[:16]


@dataclass
class SyntheticSpec:
    """Clustered paired benchmark.

    Every image draws a latent ``u = prototype[concept] + instance_scale * eta``.
    Regions and words are noisy copies of ``u`` pushed through fixed random
    per-modality linear maps plus a modality offset; ``round(overlap * regions)``
    regions of each image are replaced by regions of random images from other
    concepts.
    """

    concepts: int = 50
    images_per_concept: int = 10
    captions_per_image: int = 5
    regions: int = 8
    words: int = 6
    d_img: int = 32
    d_txt: int = 24
    latent_dim: int = 16
    separation: float = 1.0
    instance_scale: float = 0.4
    noise: float = 0.8
    overlap: float = 0.3
    modality_offset: float = 1.0
    seed: int = 0

    def validate(self):
        if self.concepts < 2:
            raise ValueError("need at least 2 concepts")
        if min(self.images_per_concept, self.captions_per_image, self.regions, self.words) < 1:
            raise ValueError("counts must be positive")
        if min(self.d_img, self.d_txt, self.latent_dim) < 1:
            raise ValueError("dimensions must be positive")
        if self.noise < 0 or self.instance_scale < 0 or self.separation < 0:
            raise ValueError("scales must be non-negative")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        n_img = self.concepts * self.images_per_concept
        if self.regions >= 1 << 32 or self.words >= 1 << 32 or max(self.d_img, self.d_txt) >= 1 << 32:
            raise ValueError("rows and dims must fit in u32")
        total = n_img * (self.regions * self.d_img + self.captions_per_image * self.words * self.d_txt)
        if total > MAX_ELEMENTS:
            raise ValueError(f"spec would generate {total} feature values (limit {MAX_ELEMENTS})")


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    rng = Rng(spec.seed)
    L, C = spec.latent_dim, spec.concepts
    n_img = C * spec.images_per_concept
    scale = 1.0 / np.sqrt(L)
    prototypes = spec.separation * scale * rng.normal((C, L))
    M_img = rng.normal((L, spec.d_img)) * scale
    M_txt = rng.normal((L, spec.d_txt)) * scale
    o_img = spec.modality_offset * rng.normal(spec.d_img) / np.sqrt(spec.d_img)
    o_txt = spec.modality_offset * rng.normal(spec.d_txt) / np.sqrt(spec.d_txt)

    concept = np.repeat(np.arange(C), spec.images_per_concept)
    latent = prototypes[concept] + spec.instance_scale * scale * rng.normal((n_img, L))

    n_dis = int(round(spec.overlap * spec.regions))
    images, sentences, pairs, concepts = [], [], {}, {}
    next_caption = 0
    for i in range(n_img):
        u = np.repeat(latent[i][None], spec.regions, axis=0)
        if n_dis:
            # distractors come from random images of other concepts
            slots = rng.permutation(spec.regions)[:n_dis]
            others = np.flatnonzero(concept != concept[i])
            src = others[rng.integers(len(others), n_dis)]
            u[np.sort(slots)] = latent[src]
        regions = (u + spec.noise * scale * rng.normal((spec.regions, L))) @ M_img + o_img
        images.append(FeatureItem(i, IMAGE, _f32(regions)))
        caps = []
        for _ in range(spec.captions_per_image):
            w = latent[i] + spec.noise * scale * rng.normal((spec.words, L))
            sentences.append(FeatureItem(next_caption, TEXT, _f32(w @ M_txt + o_txt)))
            caps.append(next_caption)
            next_caption += 1
        pairs[i] = caps
        concepts[i] = int(concept[i])
    meta = {
        "prototypes": prototypes,
        "M_img": M_img,
        "M_txt": M_txt,
        "o_img": o_img,
        "o_txt": o_txt,
        "spec": asdict(spec),
    }
    return Dataset(images, sentences, pairs, {}, concepts, meta)


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Assign images (and hence their captions) to train/val/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) > 1.0 + 1e-12:
        raise ValueError("fractions must be three non-negative values summing to <= 1")
    ids = dataset.image_ids()
    n = len(ids)
    counts = [int(round(f * n)) for f in fractions]
    if sum(counts) > n:
        counts[-1] = n - counts[0] - counts[1]
    if any(f > 0 and c == 0 for f, c in zip(fractions, counts)):
        raise ValueError(f"dataset of {n} images too small for fractions {fractions}")
    order = Rng.stream(seed, 11).permutation(n)
    assignment = {}
    start = 0
    for name, c in zip(SPLITS, counts):
        for j in order[start : start + c]:
            assignment[ids[j]] = name
        start += c
    return Dataset(
        dataset.images, dataset.sentences, dataset.pairs, assignment, dataset.concepts, dataset.meta
    )


def folds(dataset: Dataset, split_name: str = "test", n_folds: int = 5, seed: int = 0) -> list:
    """Partition a split's images into ``n_folds`` equal disjoint folds."""
    ids = dataset.image_ids(split_name)
    if len(ids) < n_folds or len(ids) % n_folds:
        raise ValueError(f"{len(ids)} {split_name} images cannot form {n_folds} equal folds")
    order = Rng.stream(seed, 12).permutation(len(ids))
    size = len(ids) // n_folds
    return [sorted(ids[j] for j in order[f * size : (f + 1) * size]) for f in range(n_folds)]


def write_features(path, items) -> None:
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, len(items)))
        for it in items:
            X = np.ascontiguousarray(it.features, dtype="<f4")
            fh.write(_ITEM_HEADER.pack(it.id, X.shape[0], X.shape[1]))
            fh.write(X.tobytes())


def read_features(path, modality: str = IMAGE) -> list:
    data = Path(path).read_bytes()
    if len(data) < _FILE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count = _FILE_HEADER.unpack_from(data)
    if magic != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    items, off = [], _FILE_HEADER.size
    for _ in range(count):
        if off + _ITEM_HEADER.size > len(data):
            raise FormatError(f"{path}: truncated item header")
        item_id, rows, dim = _ITEM_HEADER.unpack_from(data, off)
        off += _ITEM_HEADER.size
        nbytes = rows * dim * 4
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated item {item_id}")
        X = np.frombuffer(data, dtype="<f4", count=rows * dim, offset=off).reshape(rows, dim)
        items.append(FeatureItem(int(item_id), modality, X.astype(np.float64)))
        off += nbytes
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return items


def write_manifest(path, dataset: Dataset) -> None:
    with open(path, "w") as fh:
        for img in dataset.image_ids():
            rec = {"image": int(img), "captions": [int(c) for c in dataset.pairs[img]]}
            if img in dataset.split:
                rec["split"] = dataset.split[img]
            if img in dataset.concepts:
                rec["concept"] = int(dataset.concepts[img])
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path):
    pairs, splits, concepts = {}, {}, {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                img = int(rec["image"])
                pairs[img] = [int(c) for c in rec["captions"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest record") from exc
            if "split" in rec:
                splits[img] = rec["split"]
            if "concept" in rec:
                concepts[img] = int(rec["concept"])
    return pairs, splits, concepts


def save_dataset(directory, dataset: Dataset) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "images": d / "images.addrfeat",
        "sentences": d / "sentences.addrfeat",
        "manifest": d / "manifest.jsonl",
    }
    write_features(paths["images"], dataset.images)
    write_features(paths["sentences"], dataset.sentences)
    write_manifest(paths["manifest"], dataset)
    return paths


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "manifest.jsonl").exists():
        raise FileNotFoundError(f"no manifest.jsonl in {d}")
    images = read_features(d / "images.addrfeat", IMAGE)
    sentences = read_features(d / "sentences.addrfeat", TEXT)
    pairs, splits, concepts = read_manifest(d / "manifest.jsonl")
    return Dataset(images, sentences, pairs, splits, concepts)
