"""Feature containers, on-disk formats, synthetic data and batching.

Binary layout of an ``.ascl`` file (all integers u32 little endian, all
reals float32 little endian)::

    b"ASCL" | version | D | n_images | n_captions
    per image:   id | D | K | K*D regions | D global
    per caption: id | parent id | split (u8) | D | L | L*D words

Every record repeats D so a record written at another width is caught
by name instead of silently misaligning the rest of the file.

Strings are a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericError, PairingError, ShapeError
from .numerics import as_mat

MAGIC = b"ASCL"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class ImageFeatures:
    image_id: str
    regions: np.ndarray
    global_vec: np.ndarray

    def __post_init__(self):
        self.regions = as_mat(self.regions, name=f"regions of image {self.image_id!r}")
        self.global_vec = as_mat(self.global_vec, ndim=1, name=f"global vector of image {self.image_id!r}")
        if self.regions.shape[0] < 1:
            raise ShapeError(f"image {self.image_id!r} has no regions")
        if self.regions.shape[1] != self.global_vec.shape[0]:
            raise ShapeError(f"image {self.image_id!r}: region dim {self.regions.shape[1]} "
                             f"!= global dim {self.global_vec.shape[0]}")

    @property
    def dim(self):
        return self.regions.shape[1]


@dataclass
class TextFeatures:
    text_id: str
    parent_image: str
    words: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.words = as_mat(self.words, name=f"words of caption {self.text_id!r}")
        if self.words.shape[0] < 1:
            raise ShapeError(f"caption {self.text_id!r} has no words")
        if self.split not in SPLITS:
            raise ConfigError(f"caption {self.text_id!r}: unknown split {self.split!r}")

    @property
    def word_count(self):
        return self.words.shape[0]

    @property
    def dim(self):
        return self.words.shape[1]


@dataclass
class PairedDataset:
    images: list
    captions: list
    image_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.image_index = {}
        for i, img in enumerate(self.images):
            if img.image_id in self.image_index:
                raise ConfigError(f"duplicate image id {img.image_id!r}")
            self.image_index[img.image_id] = i
        dims = {img.dim for img in self.images} | {cap.dim for cap in self.captions}
        if len(dims) > 1:
            raise ShapeError(f"inconsistent feature dimensions {sorted(dims)}")
        seen = set()
        for cap in self.captions:
            if cap.parent_image not in self.image_index:
                raise PairingError(f"caption {cap.text_id!r} references unknown image {cap.parent_image!r}")
            if cap.text_id in seen:
                raise ConfigError(f"duplicate caption id {cap.text_id!r}")
            seen.add(cap.text_id)

    @property
    def dim(self):
        if self.images:
            return self.images[0].dim
        return self.captions[0].dim if self.captions else 0

    def caption_groups(self, split=None):
        """Map image id -> caption indices, optionally restricted to one split."""
        groups = {img.image_id: [] for img in self.images}
        for j, cap in enumerate(self.captions):
            if split is None or cap.split == split:
                groups[cap.parent_image].append(j)
        return groups

    def split_indices(self, split):
        return [j for j, cap in enumerate(self.captions) if cap.split == split]

    def parent_of(self, caption_idx):
        return self.image_index[self.captions[caption_idx].parent_image]


def datasets_equal(a, b):
    """Structural equality, comparing arrays exactly."""
    if len(a.images) != len(b.images) or len(a.captions) != len(b.captions):
        return False
    for x, y in zip(a.images, b.images):
        if x.image_id != y.image_id or not np.array_equal(x.regions, y.regions) \
                or not np.array_equal(x.global_vec, y.global_vec):
            return False
    for x, y in zip(a.captions, b.captions):
        if (x.text_id, x.parent_image, x.split) != (y.text_id, y.parent_image, y.split) \
                or not np.array_equal(x.words, y.words):
            return False
    return True


# -- binary format ---------------------------------------------------------

def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_f32(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_features(dataset, path):
    D = dataset.dim
    parts = [MAGIC, struct.pack("<IIII", FORMAT_VERSION, D, len(dataset.images), len(dataset.captions))]
    for img in dataset.images:
        parts += [_pack_str(img.image_id), struct.pack("<II", img.dim, img.regions.shape[0]),
                  _pack_f32(img.regions), _pack_f32(img.global_vec)]
    for cap in dataset.captions:
        parts += [_pack_str(cap.text_id), _pack_str(cap.parent_image),
                  struct.pack("<BII", SPLITS.index(cap.split), cap.dim, cap.word_count), _pack_f32(cap.words)]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated payload while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def record_dim(self, header_dim, what):
        at = self.pos
        d = self.u32(f"dimension of {what}")
        if d != header_dim:
            raise FormatError(f"{what} has dimension {d}, header says {header_dim}", at)

    def u8(self, what):
        return self.take(1, what)[0]

    def string(self, what):
        n = self.u32(what)
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {what}", start) from exc

    def floats(self, count, what):
        start = self.pos
        arr = np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"non-finite value in {what}", start)
        return arr


def load_features(path):
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic bytes, not an ASCL file", 0)
    version_at = r.pos
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", version_at)
    D = r.u32("dimension")
    n_images = r.u32("image count")
    n_captions = r.u32("caption count")
    images = []
    for _ in range(n_images):
        rec_at = r.pos
        image_id = r.string("image id")
        r.record_dim(D, f"image {image_id!r}")
        K = r.u32(f"region count of image {image_id!r}")
        try:
            regions = r.floats(K * D, f"regions of image {image_id!r}").reshape(K, D)
            global_vec = r.floats(D, f"global vector of image {image_id!r}")
            images.append(ImageFeatures(image_id, regions, global_vec))
        except (ShapeError, NumericError) as exc:
            raise FormatError(f"bad record for image {image_id!r}: {exc}", rec_at) from exc
    captions = []
    for _ in range(n_captions):
        rec_at = r.pos
        text_id = r.string("caption id")
        parent = r.string(f"parent id of caption {text_id!r}")
        split_code = r.u8(f"split tag of caption {text_id!r}")
        if split_code >= len(SPLITS):
            raise FormatError(f"caption {text_id!r}: bad split tag {split_code}", r.pos - 1)
        r.record_dim(D, f"caption {text_id!r}")
        L = r.u32(f"word count of caption {text_id!r}")
        try:
            words = r.floats(L * D, f"words of caption {text_id!r}").reshape(L, D)
            captions.append(TextFeatures(text_id, parent, words, SPLITS[split_code]))
        except (ShapeError, NumericError) as exc:
            raise FormatError(f"bad record for caption {text_id!r}: {exc}", rec_at) from exc
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after last record", r.pos)
    try:
        return PairedDataset(images, captions)
    except (PairingError, ConfigError, ShapeError) as exc:
        raise FormatError(str(exc)) from exc


# -- JSON manifest -----------------------------------------------------------

def dataset_from_dict(obj):
    """Build a dataset from the JSON manifest layout.

    ``{"dim": D, "images": [{"id", "regions", "global"}],
    "captions": [{"id", "parent", "words", "split"?}]}``
    """
    try:
        D = obj.get("dim")
        images = [ImageFeatures(str(im["id"]), im["regions"], im["global"]) for im in obj["images"]]
        captions = [TextFeatures(str(c["id"]), str(c["parent"]), c["words"], c.get("split", "train"))
                    for c in obj["captions"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed manifest: missing or invalid field {exc}") from exc
    ds = PairedDataset(images, captions)
    if D is not None and ds.dim != D:
        raise ShapeError(f"manifest declares dim {D} but records have dim {ds.dim}")
    return ds


def dataset_to_dict(dataset):
    return {
        "dim": dataset.dim,
        "images": [{"id": im.image_id, "regions": im.regions.tolist(), "global": im.global_vec.tolist()}
                   for im in dataset.images],
        "captions": [{"id": c.text_id, "parent": c.parent_image, "words": c.words.tolist(), "split": c.split}
                     for c in dataset.captions],
    }


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return dataset_from_dict(json.load(fh))


def save_manifest(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset_to_dict(dataset), fh)


def load_dataset(path):
    """Load either format, dispatching on the file extension."""
    if str(path).endswith(".json"):
        return load_manifest(path)
    return load_features(path)


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthConfig:
    """Knobs of the synthetic paired-feature generator.

    Each image owns ``signature_concepts`` private concept vectors and draws
    ``concepts_per_image - signature_concepts`` more from a shared pool of
    ``shared_concepts``. Regions, words and the global vector are noisy
    copies of those unit-norm concepts; ``noise`` is the per-coordinate
    standard deviation.

    With ``twins``, consecutive images share their signature and the same
    attribute and object vectors but bind them differently (each shared
    concept is an attribute plus an object), so only region-word matching
    can tell the two apart.

    ``asymmetric`` is the probability that a caption is replaced by a
    truncated, concatenated or redundant (foreign words injected) variant.
    """

    clusters: int = 32
    captions_per_image: int = 5
    dim: int = 64
    regions: int = 8
    min_words: int = 6
    max_words: int = 12
    concepts_per_image: int = 4
    signature_concepts: int = 1
    shared_concepts: int = 32
    min_caption_concepts: int = 2
    noise: float = 0.1
    test_captions: int = 1
    val_captions: int = 0
    asymmetric: float = 0.0
    truncate_range: tuple = (0.3, 0.6)
    redundant_words: int = 2
    max_length: int = 64
    twins: bool = False

    def validate(self):
        if self.clusters < 2:
            raise ConfigError("synthetic data needs at least 2 clusters for retrieval")
        if self.captions_per_image < 2:
            raise ConfigError("captions_per_image must be at least 2")
        if self.test_captions + self.val_captions >= self.captions_per_image:
            raise ConfigError("held-out captions leave no training captions")
        if self.dim < 1 or self.regions < 1:
            raise ConfigError("dim and regions must be positive")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        if not 1 <= self.signature_concepts <= self.concepts_per_image:
            raise ConfigError("need 1 <= signature_concepts <= concepts_per_image")
        shared = self.concepts_per_image - self.signature_concepts
        if shared > self.shared_concepts:
            raise ConfigError("shared concept pool too small")
        if self.twins and (self.clusters % 2 or shared < 2):
            raise ConfigError("twins need an even cluster count and at least 2 shared concepts per image")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if not 0.0 <= self.asymmetric <= 1.0:
            raise ConfigError("asymmetric must be a probability")


def _concept_bank(rng, n, d):
    """``n`` unit vectors; orthonormal whenever ``n <= d``."""
    x = rng.standard_normal((n, d))
    if n <= d:
        q, r = np.linalg.qr(x.T)
        return (q * np.sign(np.diag(r))).T
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _derangement(rng, n):
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def _image_concepts(cfg, rng):
    """Per-image concept matrices (signatures first) and a foreign-concept sampler."""
    D, C, sig = cfg.dim, cfg.clusters, cfg.signature_concepts
    n_shared = cfg.concepts_per_image - sig
    if not cfg.twins:
        bank = _concept_bank(rng, C * sig + max(cfg.shared_concepts, 1), D)
        signatures = bank[:C * sig].reshape(C, sig, D)
        pool = bank[C * sig:]
        sets = []
        for c in range(C):
            picks = rng.choice(cfg.shared_concepts, size=n_shared, replace=False)
            sets.append(np.concatenate([signatures[c], pool[picks]], axis=0))

        def foreign(concepts, n):
            return pool[rng.choice(cfg.shared_concepts, size=n)]
        return sets, foreign

    # twins: consecutive images share a signature and the same attributes and
    # objects, bound differently (attribute + object summed into one concept)
    pairs = C // 2
    bank = _concept_bank(rng, pairs * sig + 2 * cfg.shared_concepts, D)
    signatures = bank[:pairs * sig].reshape(pairs, sig, D)
    attrs = bank[pairs * sig:pairs * sig + cfg.shared_concepts]
    objs = bank[pairs * sig + cfg.shared_concepts:]
    sets = []
    for c in range(pairs):
        a = rng.choice(cfg.shared_concepts, size=n_shared, replace=False)
        o = rng.choice(cfg.shared_concepts, size=n_shared, replace=False)
        for binding in (np.arange(n_shared), _derangement(rng, n_shared)):
            bound = (attrs[a] + objs[o[binding]]) / np.sqrt(2.0)
            sets.append(np.concatenate([signatures[c], bound], axis=0))

    def foreign(concepts, n):
        return (attrs[rng.choice(cfg.shared_concepts, size=n)]
                + objs[rng.choice(cfg.shared_concepts, size=n)]) / np.sqrt(2.0)
    return sets, foreign


def generate_synthetic(config=None, seed=0):
    """Generate a paired dataset whose ground-truth pairing is recoverable."""
    cfg = config or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    D = cfg.dim
    sig = cfg.signature_concepts
    concept_sets, foreign = _image_concepts(cfg, rng)

    images, captions = [], []
    for c, concepts in enumerate(concept_sets):
        m = len(concepts)
        owner = rng.permutation(np.arange(cfg.regions) % m)
        regions = concepts[owner] + cfg.noise * rng.standard_normal((cfg.regions, D))
        global_vec = concepts.mean(axis=0) + cfg.noise * rng.standard_normal(D)
        image_id = f"img{c:04d}"
        images.append(ImageFeatures(image_id, regions, global_vec))

        words_list = []
        for _ in range(cfg.captions_per_image):
            L = int(rng.integers(cfg.min_words, cfg.max_words + 1))
            k = int(rng.integers(min(cfg.min_caption_concepts, m), m + 1))
            extra = rng.choice(np.arange(sig, m), size=min(k - 1, m - sig), replace=False)
            chosen = np.concatenate([[int(rng.integers(sig))], extra]).astype(int)
            # balanced: every chosen concept gets floor or ceil of L/k words;
            # the signature is always present
            cycle = np.concatenate([chosen[:1], rng.permutation(chosen[1:])])
            owner = rng.permutation(np.resize(cycle, L))
            words_list.append(concepts[owner] + cfg.noise * rng.standard_normal((len(owner), D)))

        n_train = cfg.captions_per_image - cfg.test_captions - cfg.val_captions
        for j, words in enumerate(words_list):
            if cfg.asymmetric and rng.random() < cfg.asymmetric:
                words = _asymmetric_variant(words, words_list, j, foreign, cfg, rng)
            split = "train" if j < n_train else ("val" if j < n_train + cfg.val_captions else "test")
            captions.append(TextFeatures(f"{image_id}_c{j}", image_id, words, split))
    return PairedDataset(images, captions)


def _asymmetric_variant(words, siblings, j, foreign, cfg, rng):
    kind = int(rng.integers(3))
    if kind == 0:
        rho = rng.uniform(*cfg.truncate_range)
        return words[:max(1, math.ceil(rho * len(words)))]
    if kind == 1:
        other = siblings[(j + 1 + int(rng.integers(len(siblings) - 1))) % len(siblings)]
        return np.concatenate([words, other], axis=0)[:cfg.max_length]
    out = words.copy()
    n = min(cfg.redundant_words, len(out) - 1)
    if n < 1:
        return out
    rows = rng.choice(len(out), size=n, replace=False)
    out[rows] = foreign(None, n) + cfg.noise * rng.standard_normal((n, words.shape[1]))
    return out


def nearest_centroid_accuracy(dataset, split=None):
    """Fraction of captions whose mean word vector is most cosine-similar
    to the mean region vector of their own image."""
    centroids = np.stack([img.regions.mean(axis=0) for img in dataset.images])
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    idx = range(len(dataset.captions)) if split is None else dataset.split_indices(split)
    hits = total = 0
    for j in idx:
        q = dataset.captions[j].words.mean(axis=0)
        sims = centroids @ (q / np.linalg.norm(q))
        hits += int(np.argmax(sims) == dataset.parent_of(j))
        total += 1
    return hits / total


# -- batching ----------------------------------------------------------------

@dataclass
class Batch:
    images: list
    texts: list
    caption_indices: np.ndarray

    def __len__(self):
        return len(self.texts)


def make_batches(dataset, batch_size, seed=0, shuffle=True, split="train"):
    """Partition the pairs of ``split`` into full batches of ``batch_size``.

    The remainder that does not fill a batch is dropped.
    """
    if batch_size < 2:
        raise ConfigError("batch size must be at least 2 (in-batch negatives)")
    idx = np.asarray(dataset.split_indices(split), dtype=int)
    if batch_size > len(idx):
        raise ConfigError(f"batch size {batch_size} exceeds the {len(idx)} pairs of split {split!r}")
    if shuffle:
        idx = idx[np.random.default_rng(seed).permutation(len(idx))]
    batches = []
    for start in range(0, len(idx) - batch_size + 1, batch_size):
        sel = idx[start:start + batch_size]
        batches.append(Batch([dataset.images[dataset.parent_of(j)] for j in sel],
                             [dataset.captions[j] for j in sel], sel))
    return batches
