"""Hierarchical cross-modal fusion and image-text similarity.

For an image (regions ``V`` (K, D), whole-image vector ``G``) and a caption
(words ``W`` (L, D)):

* image-to-text attention: every region queries the words, giving the
  region-attended text ``W*`` (K, D);
* text-to-image attention: every word queries the regions, giving the
  word-attended image ``V*`` (L, D);
* global text vector ``W_g = X_w^T mean(W*)``, global image vector
  ``V_g = lam * X_v^T mean(V*) + (1 - lam) * X_g^T G``;
* ``s_local`` averages region/word cosines in both directions, ``s_global``
  is ``cos(V_g, W_g)`` and ``s = u1 * s_local + (1 - u1) * s_global``.

All scoring is batched: ``forward`` scores N images against M captions in
one pass over padded, masked tensors, and ``backward`` returns gradients
for every learnable array in :class:`ModelParams`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateVectorError, ShapeError, StateError
from .numerics import (
    COSINE_EPS,
    cosine_rows,
    cosine_rows_backward,
    sdp_attention,
    sdp_attention_backward,
)


@dataclass
class CrossAttentionParams:
    """Multi-head projections. Head ``h`` uses columns ``h*D/H:(h+1)*D/H``
    of ``zx`` (query side) and ``zy`` (key/value side)."""

    zx: np.ndarray
    zy: np.ndarray
    zo: np.ndarray
    heads: int

    def __post_init__(self):
        D = self.zo.shape[0]
        if self.heads < 1 or D % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide dimension {D}")
        for name in ("zx", "zy", "zo"):
            if getattr(self, name).shape != (D, D):
                raise ShapeError(f"{name} must be {D}x{D}")

    @classmethod
    def init(cls, dim, heads, rng, scale=None):
        s = (1.0 / np.sqrt(dim)) if scale is None else scale
        return cls(*(s * rng.standard_normal((dim, dim)) for _ in range(3)), heads=heads)


@dataclass
class GlobalProjectionParams:
    xw: np.ndarray
    xv: np.ndarray
    xg: np.ndarray
    lam: np.ndarray = field(default_factory=lambda: np.array(0.5))

    def __post_init__(self):
        self.lam = np.array(float(self.lam))
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"fusion weight must lie in [0, 1], got {float(self.lam)}")

    @classmethod
    def init(cls, dim, rng, lam=0.5):
        s = 1.0 / np.sqrt(dim)
        return cls(*(s * rng.standard_normal((dim, dim)) for _ in range(3)), lam=lam)


@dataclass
class ModelParams:
    i2t: CrossAttentionParams
    t2i: CrossAttentionParams
    glob: GlobalProjectionParams
    u1: float = 0.8
    positional_encoding: bool = True
    positional_scale: float = 0.02
    learn_lambda: bool = False
    fusion: bool = True

    def __post_init__(self):
        if not 0.0 <= self.u1 <= 1.0:
            raise ConfigError(f"u1 must lie in [0, 1], got {self.u1}")
        if self.i2t.zo.shape != self.t2i.zo.shape or self.i2t.heads != self.t2i.heads:
            raise ShapeError("both attention directions must share D and H")
        if self.glob.xw.shape != self.i2t.zo.shape:
            raise ShapeError("global projections must be DxD")

    @classmethod
    def init(cls, dim, heads, seed=0, *, tie_directions=False, lam=0.5, **kwargs):
        rng = np.random.default_rng(seed)
        i2t = CrossAttentionParams.init(dim, heads, rng)
        t2i = i2t if tie_directions else CrossAttentionParams.init(dim, heads, rng)
        return cls(i2t, t2i, GlobalProjectionParams.init(dim, rng, lam), **kwargs)

    @property
    def dim(self):
        return self.i2t.zo.shape[0]

    @property
    def tied(self):
        return self.t2i is self.i2t

    def named(self):
        """Learnable arrays by name (shared arrays appear once)."""
        out = {}
        for prefix, p in (("i2t", self.i2t), ("t2i", self.t2i)):
            if prefix == "t2i" and self.tied:
                continue
            out.update({f"{prefix}.zx": p.zx, f"{prefix}.zy": p.zy, f"{prefix}.zo": p.zo})
        out.update({"global.xw": self.glob.xw, "global.xv": self.glob.xv, "global.xg": self.glob.xg})
        if self.learn_lambda:
            out["global.lam"] = self.glob.lam
        return out

    def copy(self):
        i2t = CrossAttentionParams(self.i2t.zx.copy(), self.i2t.zy.copy(), self.i2t.zo.copy(), self.i2t.heads)
        t2i = i2t if self.tied else CrossAttentionParams(
            self.t2i.zx.copy(), self.t2i.zy.copy(), self.t2i.zo.copy(), self.t2i.heads)
        glob = GlobalProjectionParams(self.glob.xw.copy(), self.glob.xv.copy(), self.glob.xg.copy(),
                                      float(self.glob.lam))
        return ModelParams(i2t, t2i, glob, self.u1, self.positional_encoding, self.positional_scale,
                           self.learn_lambda, self.fusion)

    def clip_(self):
        """Project constrained parameters back into range after an update."""
        np.clip(self.glob.lam, 0.0, 1.0, out=self.glob.lam)


@dataclass
class PairScore:
    s_local: float
    s_global: float
    s: float


def positional_encoding(length, dim, scale=1.0):
    """Sinusoidal position codes, (length, dim)."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return scale * np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _split_heads(x, heads):
    *lead, m, d = x.shape
    return np.swapaxes(x.reshape(*lead, m, heads, d // heads), -2, -3)


def _merge_heads(x):
    x = np.swapaxes(x, -2, -3)
    *lead, m, h, dh = x.shape
    return x.reshape(*lead, m, h * dh)


def _param_grad(inp, dout):
    """``sum over leading dims of inp^T @ dout`` for a (D, D) weight."""
    inp = np.broadcast_to(inp, dout.shape[:-1] + inp.shape[-1:])
    return np.tensordot(inp, dout, axes=(tuple(range(inp.ndim - 1)), tuple(range(dout.ndim - 1))))


def cross_attend(X, Y, params, y_mask=None, *, return_cache=False):
    """Multi-head cross attention: rows of ``X`` query the rows of ``Y``.

    ``X`` is (..., M, D) and ``Y`` is (..., N, D); leading dimensions
    broadcast. Keys and values are both ``Y Z^Y``. Returns (..., M, D).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    D = params.zo.shape[0]
    if X.shape[-1] != D or Y.shape[-1] != D:
        raise ShapeError(f"cross_attend expects feature dim {D}, got {X.shape[-1]} and {Y.shape[-1]}")
    q = _split_heads(X @ params.zx, params.heads)
    k = _split_heads(Y @ params.zy, params.heads)
    key_mask = None if y_mask is None else np.asarray(y_mask, bool)[..., None, :]
    heads, att_cache = sdp_attention(q, k, k, key_mask, return_cache=True)
    concat = _merge_heads(heads)
    out = concat @ params.zo
    if return_cache:
        return out, (X, Y, concat, att_cache, params)
    return out


def cross_attend_backward(dout, cache):
    """Gradients ``(dzx, dzy, dzo)`` of the projections."""
    X, Y, concat, att_cache, params = cache
    dzo = _param_grad(concat, dout)
    dheads = _split_heads(dout @ params.zo.T, params.heads)
    dq, dk, dv = sdp_attention_backward(dheads, att_cache)
    dzx = _param_grad(X, _merge_heads(dq))
    dzy = _param_grad(Y, _merge_heads(dk + dv))
    return dzx, dzy, dzo


def _pack(mats):
    lengths = np.array([m.shape[0] for m in mats])
    D = mats[0].shape[1]
    out = np.zeros((len(mats), lengths.max(), D))
    for i, m in enumerate(mats):
        out[i, :m.shape[0]] = m
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]
    return out, mask, lengths


def _cos(x, y, mask, strict):
    if strict:
        bad = (np.linalg.norm(x, axis=-1) == 0.0) | (np.linalg.norm(y, axis=-1) == 0.0)
        if mask is not None:
            bad &= mask
        if np.any(bad):
            raise DegenerateVectorError("zero-norm vector in similarity computation")
    return cosine_rows(x, y, eps=COSINE_EPS)


def forward(images, texts, params, *, strict=True):
    """Score every image against every text.

    Returns ``(S, cache)`` with ``S[n, m] = score(images[n], texts[m]).s``.
    ``strict`` raises on zero-norm vectors instead of clamping the cosine
    denominators (clamping is for training, where cutoff negatives can
    produce all-zero word rows).
    """
    if not images or not texts:
        raise ShapeError("forward needs at least one image and one text")
    D = params.dim
    V, vmask, K = _pack([im.regions for im in images])
    W, wmask, L = _pack([t.words for t in texts])
    if V.shape[-1] != D or W.shape[-1] != D:
        raise ShapeError(f"model dim {D} but features have dims {V.shape[-1]} and {W.shape[-1]}")
    G = np.stack([im.global_vec for im in images])
    Watt = W + positional_encoding(W.shape[1], D, params.positional_scale) if params.positional_encoding else W

    Kf = K[:, None, None].astype(float)       # (N, 1, 1)
    Lf = L[None, :, None].astype(float)       # (1, M, 1)
    vm = vmask[:, None, :]                    # (N, 1, K)
    wm = wmask[None, :, :]                    # (1, M, L)

    if params.fusion:
        Wstar, i2t_cache = cross_attend(V[:, None], Watt[None], params.i2t, wmask[None], return_cache=True)
        Vstar, t2i_cache = cross_attend(Watt[None], V[:, None], params.t2i, vmask[:, None], return_cache=True)
    else:
        # no cross-modal interaction: each side sees the other's mean row
        Wmean = np.sum(W * wmask[..., None], axis=1) / L[:, None]
        Vmean = np.sum(V * vmask[..., None], axis=1) / K[:, None]
        Wstar = np.broadcast_to(Wmean[None, :, None, :], (len(images), len(texts), V.shape[1], D))
        Vstar = np.broadcast_to(Vmean[:, None, None, :], (len(images), len(texts), W.shape[1], D))
        i2t_cache = t2i_cache = None

    c1, c1_cache = _cos(V[:, None], Wstar, vm, strict)          # (N, M, K)
    c2, c2_cache = _cos(W[None], Vstar, wm, strict)             # (N, M, L)
    s_local = np.sum(c1 * vm, -1) / (2 * Kf[..., 0]) + np.sum(c2 * wm, -1) / (2 * Lf[..., 0])

    Wbar = np.sum(Wstar * vm[..., None], axis=2) / Kf         # (N, M, D)
    Vbar = np.sum(Vstar * wm[..., None], axis=2) / Lf         # (N, M, D)
    Wg = Wbar @ params.glob.xw
    Vg1 = Vbar @ params.glob.xv
    Vg2 = (G @ params.glob.xg)[:, None, :]
    lam = float(params.glob.lam)
    Vg = lam * Vg1 + (1.0 - lam) * Vg2
    s_global, cg_cache = _cos(Vg, Wg, None, strict)

    u1 = params.u1
    S = u1 * s_local + (1.0 - u1) * s_global
    cache = dict(params=params, V=V, W=W, G=G, Watt=Watt, vm=vm, wm=wm, Kf=Kf, Lf=Lf,
                 i2t=i2t_cache, t2i=t2i_cache, c1=c1_cache, c2=c2_cache, cg=cg_cache,
                 Wbar=Wbar, Vbar=Vbar, Vg1=Vg1, Vg2=Vg2, Vg=Vg, Wg=Wg, Wstar=Wstar, Vstar=Vstar,
                 s_local=s_local, s_global=s_global)
    return S, cache


def backward(dS, cache):
    """Gradients of ``sum(dS * S)`` w.r.t. every array in ``params.named()``."""
    if cache is None:
        raise StateError("backward called without a forward cache")
    p = cache["params"]
    vm, wm, Kf, Lf = cache["vm"], cache["wm"], cache["Kf"], cache["Lf"]
    lam = float(p.glob.lam)
    ds_local = p.u1 * dS
    ds_global = (1.0 - p.u1) * dS

    dVg, dWg = cosine_rows_backward(ds_global, cache["cg"])
    grads = {
        "global.xw": _param_grad(cache["Wbar"], dWg),
        "global.xv": _param_grad(cache["Vbar"], lam * dVg),
        "global.xg": _param_grad(cache["G"], (1.0 - lam) * dVg.sum(axis=1)),
    }
    if p.learn_lambda:
        grads["global.lam"] = np.array(np.sum(dVg * (cache["Vg1"] - cache["Vg2"])))
    dWbar = dWg @ p.glob.xw.T
    dVbar = (lam * dVg) @ p.glob.xv.T

    for prefix, attn_cache, cos_cache, mask, count, dbar in (
            ("i2t", cache["i2t"], cache["c1"], vm, Kf, dWbar),
            ("t2i", cache["t2i"], cache["c2"], wm, Lf, dVbar)):
        dcos = ds_local[..., None] * mask / (2 * count)
        _, dstar = cosine_rows_backward(dcos, cos_cache)
        dstar = dstar + dbar[:, :, None, :] * (mask / count)[..., None]
        D = p.dim
        if attn_cache is None:
            gz = (np.zeros((D, D)),) * 3
        else:
            gz = cross_attend_backward(dstar, attn_cache)
        key = "i2t" if (prefix == "i2t" or p.tied) else "t2i"
        for name, g in zip(("zx", "zy", "zo"), gz):
            full = f"{key}.{name}"
            grads[full] = grads[full] + g if full in grads else g
    return grads


def score_matrix(images, texts, params, *, strict=True, chunk=256):
    """(N, M) similarity matrix, rows are images and columns are texts."""
    cols = []
    for start in range(0, len(texts), chunk):
        S, _ = forward(images, texts[start:start + chunk], params, strict=strict)
        cols.append(S)
    return np.concatenate(cols, axis=1)


def score(image, text, params):
    _, cache = forward([image], [text], params)
    sl = float(cache["s_local"][0, 0])
    sg = float(cache["s_global"][0, 0])
    return PairScore(sl, sg, params.u1 * sl + (1.0 - params.u1) * sg)


def fuse(image, text, params):
    """Fused representations of one pair: ``(W*, V*, V_g, W_g)``."""
    _, c = forward([image], [text], params)
    K, L = image.regions.shape[0], text.word_count
    return (np.array(c["Wstar"][0, 0, :K]), np.array(c["Vstar"][0, 0, :L]),
            c["Vg"][0, 0].copy(), c["Wg"][0, 0].copy())


def paired_global_embeddings(images, texts, params):
    """Global vectors ``(V_g, W_g)`` of the aligned pairs ``(images[i], texts[i])``.

    Both vectors depend on the pair through cross attention, so each item
    is embedded jointly with its partner.
    """
    vg, wg = [], []
    for im, t in zip(images, texts):
        _, c = forward([im], [t], params)
        vg.append(c["Vg"][0, 0])
        wg.append(c["Wg"][0, 0])
    return np.array(vg), np.array(wg)
