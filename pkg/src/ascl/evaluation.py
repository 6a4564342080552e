"""Retrieval metrics and representation diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

from . import matcher
from .errors import ConfigError, NumericError

DEFAULT_BUCKETS = ((1, 9), (10, 20), (21, None))
KS = (1, 5, 10)


def gold_ranks(scores, gold):
    """Best (0-based) rank of any gold item for each query row.

    Ranking is by descending score; ties go to the lower gallery index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ranks = np.empty(scores.shape[0], dtype=int)
    for q in range(scores.shape[0]):
        g = sorted(gold[q])
        if not g:
            raise ConfigError(f"query {q} has no gold item")
        order = np.argsort(-scores[q], kind="stable")
        pos = np.empty_like(order)
        pos[order] = np.arange(len(order))
        ranks[q] = pos[g].min()
    return ranks


def recall_at_k(scores, gold, k):
    """Fraction of queries with a gold item among their top ``k``."""
    if k < 1:
        raise ConfigError("k must be at least 1")
    return float(np.mean(gold_ranks(scores, gold) < k))


def alignment_metric(a, b, normalize=False):
    """Mean Euclidean distance between matched rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if normalize:
        a = a / np.linalg.norm(a, axis=-1, keepdims=True)
        b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def uniformity_metric(x, normalize=True):
    """Mean and variance of distances over all unordered pairs of rows."""
    x = np.asarray(x, dtype=np.float64)
    if normalize:
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    i, j = np.triu_indices(len(x), k=1)
    d = np.linalg.norm(x[i] - x[j], axis=-1)
    return float(d.mean()), float(d.var())


@dataclass
class EvalReport:
    i2t: dict
    t2i: dict
    rsum: float
    alignment_it: float | None = None
    alignment_tt: float | None = None
    uniformity_image: tuple | None = None
    uniformity_text: tuple | None = None
    length_buckets: list = field(default_factory=list)
    n_images: int = 0
    n_queries: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def eval_sets(dataset, split):
    """Images with captions in ``split``, those captions, and each caption's image position."""
    cap_idx = dataset.split_indices(split)
    if not cap_idx:
        raise ConfigError(f"split {split!r} has no captions")
    img_idx = sorted({dataset.parent_of(j) for j in cap_idx})
    images = [dataset.images[i] for i in img_idx]
    texts = [dataset.captions[j] for j in cap_idx]
    img_pos = {i: n for n, i in enumerate(img_idx)}
    parent = np.array([img_pos[dataset.parent_of(j)] for j in cap_idx])
    return images, texts, parent


def _scores(images, texts, params):
    with np.errstate(invalid="ignore", over="ignore"):
        S = matcher.score_matrix(images, texts, params)
    if not np.all(np.isfinite(S)):
        raise NumericError("non-finite similarity scores; the model parameters are corrupt")
    return S


def bucket_label(lo, hi):
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def _bucket_of(length, buckets):
    for n, (lo, hi) in enumerate(buckets):
        if length >= lo and (hi is None or length <= hi):
            return n
    return None


def length_bucket_recalls(S, texts, parent, buckets=DEFAULT_BUCKETS, ks=KS):
    """Text-to-image recalls grouped by caption word count.

    ``S`` is (images, texts). Buckets are inclusive ``(lo, hi)`` word-count
    ranges, ``hi=None`` meaning unbounded.
    """
    which = np.array([_bucket_of(t.word_count, buckets) for t in texts], dtype=object)
    out = []
    for n, (lo, hi) in enumerate(buckets):
        sel = np.flatnonzero(which == n)
        entry = {"bucket": bucket_label(lo, hi), "count": int(len(sel))}
        if len(sel):
            ranks = gold_ranks(S[:, sel].T, [[parent[j]] for j in sel])
            entry.update({f"r{k}": float(np.mean(ranks < k)) for k in ks})
        out.append(entry)
    return out


def length_bucket_eval(params, dataset, buckets=DEFAULT_BUCKETS, split="test"):
    images, texts, parent = eval_sets(dataset, split)
    S = _scores(images, texts, params)
    return length_bucket_recalls(S, texts, parent, buckets)


def evaluate(params, dataset, split="test", *, lengths=False, buckets=DEFAULT_BUCKETS,
             diagnostics=True, normalize_alignment=False):
    """Retrieval report on ``split``.

    Image-to-text queries are the images having captions in ``split``
    (gold: all their captions there); text-to-image queries are those
    captions (gold: the parent image).
    """
    images, texts, parent = eval_sets(dataset, split)
    S = _scores(images, texts, params)
    i2t_gold = [np.flatnonzero(parent == i).tolist() for i in range(len(images))]
    t2i_gold = [[p] for p in parent]
    r_i2t = gold_ranks(S, i2t_gold)
    r_t2i = gold_ranks(S.T, t2i_gold)
    i2t = {f"r{k}": float(np.mean(r_i2t < k)) for k in KS}
    t2i = {f"r{k}": float(np.mean(r_t2i < k)) for k in KS}
    report = EvalReport(i2t, t2i, sum(i2t.values()) + sum(t2i.values()),
                        n_images=len(images), n_queries=len(texts))
    if diagnostics:
        pair_images = [images[p] for p in parent]
        vg, wg = matcher.paired_global_embeddings(pair_images, texts, params)
        report.alignment_it = alignment_metric(vg, wg, normalize_alignment)
        tt = [(a, b) for i in range(len(images)) for a, b in combinations(i2t_gold[i], 2)]
        if tt:
            a, b = zip(*tt)
            report.alignment_tt = alignment_metric(wg[list(a)], wg[list(b)], normalize_alignment)
        first = [gold[0] for gold in i2t_gold]
        if len(texts) > 1:
            report.uniformity_text = uniformity_metric(wg)
        if len(first) > 1:
            report.uniformity_image = uniformity_metric(vg[first])
    if lengths:
        report.length_buckets = length_bucket_recalls(S, texts, parent, buckets)
    return report
