"""Generated negatives and positives on word-embedding matrices.

Negatives corrupt a caption's word matrix (Gaussian noise, token shuffle,
token/feature cutoff, dropout, or a random mixture of those). Positives
either concatenate two captions of the same image or keep a prefix of one
caption.

Every generator is a pure function of its inputs and ``seed``. Seeds are
an int or a tuple of ints, passed straight to ``np.random.default_rng``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .datastore import TextFeatures
from .errors import ConfigError, DegenerateInputError, PairingError

NOISE_KINDS = ("gaussian", "shuffle", "token_cutoff", "feature_cutoff", "dropout", "mixture")
BASE_NOISE_KINDS = NOISE_KINDS[:-1]
POSITIVE_KINDS = ("concat", "truncate", "alternate")

# salt separating the mixture's choice stream from the chosen strategy's stream
_MIXTURE_SALT = 0x6D6978


def _seed_tuple(seed):
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def gaussian_noise(W, sigma, seed):
    if not sigma > 0:
        raise ConfigError("gaussian noise needs sigma > 0")
    rng = np.random.default_rng(seed)
    return W + sigma * rng.standard_normal(W.shape)


def token_shuffle(W, seed):
    """Permute the rows of ``W`` by a uniformly drawn non-identity permutation."""
    L = W.shape[0]
    if L < 2:
        raise DegenerateInputError("token shuffle needs at least 2 rows")
    rng = np.random.default_rng(seed)
    identity = np.arange(L)
    perm = rng.permutation(L)
    while np.array_equal(perm, identity):
        perm = rng.permutation(L)
    return W[perm]


def _cutoff(W, cut_count, seed, axis):
    n = W.shape[axis]
    what = "rows" if axis == 0 else "columns"
    if not 1 <= cut_count < n:
        raise ConfigError(f"cut_count must be in [1, {n}) for a matrix with {n} {what}")
    rng = np.random.default_rng(seed)
    out = W.copy()
    idx = rng.choice(n, size=cut_count, replace=False)
    if axis == 0:
        out[idx, :] = 0.0
    else:
        out[:, idx] = 0.0
    return out


def token_cutoff(W, cut_count, seed):
    """Zero ``cut_count`` distinct rows."""
    return _cutoff(W, cut_count, seed, axis=0)


def feature_cutoff(W, cut_count, seed):
    """Zero ``cut_count`` distinct columns."""
    return _cutoff(W, cut_count, seed, axis=1)


def dropout_noise(W, p, seed):
    # survivors are deliberately not rescaled: this removes information
    if not 0.0 < p < 1.0:
        raise ConfigError("dropout probability must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    return np.where(rng.random(W.shape) < p, 0.0, W)


@dataclass(frozen=True)
class NoiseStrategy:
    kind: str = "mixture"
    sigma: float = 0.1
    p: float = 0.1
    cut_count: int = 1
    components: tuple = BASE_NOISE_KINDS

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not self.sigma > 0:
            raise ConfigError("noise sigma must be positive")
        if not 0.0 < self.p < 1.0:
            raise ConfigError("dropout p must lie in (0, 1)")
        if self.cut_count < 1:
            raise ConfigError("cut_count must be at least 1")
        if self.kind == "mixture":
            if not self.components:
                raise ConfigError("mixture needs at least one component")
            bad = [c for c in self.components if c not in BASE_NOISE_KINDS]
            if bad:
                raise ConfigError(f"invalid mixture components {bad}")

    def applicable(self, shape):
        L, D = shape
        if self.kind == "shuffle":
            return L >= 2
        if self.kind == "token_cutoff":
            return self.cut_count < L
        if self.kind == "feature_cutoff":
            return self.cut_count < D
        return True

    def apply(self, W, seed):
        if self.kind == "gaussian":
            return gaussian_noise(W, self.sigma, seed)
        if self.kind == "shuffle":
            return token_shuffle(W, seed)
        if self.kind == "token_cutoff":
            return token_cutoff(W, self.cut_count, seed)
        if self.kind == "feature_cutoff":
            return feature_cutoff(W, self.cut_count, seed)
        if self.kind == "dropout":
            return dropout_noise(W, self.p, seed)
        members = [replace(self, kind=k) for k in self.components]
        return mixture(W, members, seed)


def mixture(W, strategies, seed, *, skip_inapplicable=True):
    """Apply one strategy drawn uniformly from ``strategies``.

    The draw uses a stream separate from the one handed to the chosen
    strategy, so a singleton list reproduces that strategy exactly. With
    ``skip_inapplicable`` the draw is restricted to strategies that accept
    the shape of ``W`` (e.g. no shuffle for a one-word caption).
    """
    strategies = list(strategies)
    if not strategies:
        raise ConfigError("mixture over an empty strategy list")
    if skip_inapplicable:
        strategies = [s for s in strategies if s.applicable(W.shape)]
        if not strategies:
            raise DegenerateInputError(f"no noise strategy applies to a {W.shape} matrix")
    chooser = np.random.default_rng(_seed_tuple(seed) + (_MIXTURE_SALT,))
    return strategies[int(chooser.integers(len(strategies)))].apply(W, seed)


def mixture_choice(n_strategies, seed):
    """Index the mixture would draw among ``n_strategies`` applicable ones."""
    return int(np.random.default_rng(_seed_tuple(seed) + (_MIXTURE_SALT,)).integers(n_strategies))


def concat_positive(a, b, max_length=64):
    """Rows of ``a`` followed by rows of ``b``, clipped to ``max_length``."""
    if a.parent_image != b.parent_image:
        raise PairingError(f"cannot concatenate captions of images {a.parent_image!r} and {b.parent_image!r}")
    if a.text_id == b.text_id:
        raise PairingError(f"cannot concatenate caption {a.text_id!r} with itself")
    words = np.concatenate([a.words, b.words], axis=0)[:max_length]
    return TextFeatures(f"{a.text_id}+{b.text_id}", a.parent_image, words, a.split)


def truncate_positive(text, ratio=0.5):
    """Keep the first ``ceil(ratio * L)`` word rows."""
    keep = math.ceil(ratio * text.word_count)
    if keep < 1 or not 0.0 < ratio <= 1.0:
        raise DegenerateInputError(f"truncation ratio {ratio} leaves no words of {text.text_id!r}")
    return TextFeatures(f"{text.text_id}[:{keep}]", text.parent_image, text.words[:keep], text.split)


@dataclass(frozen=True)
class PositiveStrategy:
    kind: str = "alternate"
    truncate_ratio: float = 0.5
    max_length: int = 64

    def __post_init__(self):
        if self.kind not in POSITIVE_KINDS:
            raise ConfigError(f"unknown positive kind {self.kind!r}; expected one of {POSITIVE_KINDS}")
        if not 0.0 < self.truncate_ratio < 1.0:
            raise ConfigError("truncate_ratio must lie in (0, 1)")
        if self.max_length < 1:
            raise ConfigError("max_length must be positive")

    def apply(self, text, siblings, seed):
        """Build a positive for ``text``.

        ``siblings`` are other captions of the same image; one is drawn at
        random for concatenation. Without siblings, concatenation falls
        back to truncation.
        """
        rng = np.random.default_rng(seed)
        kind = self.kind
        if kind == "alternate":
            kind = ("concat", "truncate")[int(rng.integers(2))]
        if kind == "concat" and siblings:
            other = siblings[int(rng.integers(len(siblings)))]
            return concat_positive(text, other, self.max_length)
        return truncate_positive(text, self.truncate_ratio)
