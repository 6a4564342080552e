"""Contrastive objectives on score matrices.

Score layout: ``s_it[i, j]`` is the score of image ``i`` against text
``j`` of the same batch, so the diagonal holds the positive pairs.
``s_gen[i, n]`` scores image ``i`` against the ``n``-th generated negative
text. Every loss returns its value together with the gradients w.r.t. the
score arrays it consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import softmax_rows


@dataclass
class LossInputs:
    s_it: np.ndarray
    s_gen: np.ndarray | None = None
    tau: float = 0.05

    def __post_init__(self):
        self.s_it = np.asarray(self.s_it, dtype=np.float64)
        if self.s_it.ndim != 2 or self.s_it.shape[0] != self.s_it.shape[1]:
            raise ShapeError(f"s_it must be square, got {self.s_it.shape}")
        if self.s_gen is not None:
            self.s_gen = np.asarray(self.s_gen, dtype=np.float64)
            if self.s_gen.ndim != 2 or self.s_gen.shape[0] != self.s_it.shape[0]:
                raise ShapeError(f"s_gen must have {self.s_it.shape[0]} rows, got {self.s_gen.shape}")
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")

    @property
    def s_pos(self):
        return np.diag(self.s_it).copy()

    @property
    def s_ti(self):
        return self.s_it.T


def alpha_gate(s_gen, s_pos):
    """1 where a generated negative keeps its place in the denominator.

    A generated negative is dropped (0) when its score strictly exceeds the
    positive pair's score; ties keep it.
    """
    s_gen = np.asarray(s_gen, dtype=np.float64)
    s_pos = np.asarray(s_pos, dtype=np.float64)
    if s_gen.shape[0] != s_pos.shape[0]:
        raise ShapeError(f"{s_gen.shape[0]} rows of generated scores for {s_pos.shape[0]} positives")
    return (s_gen <= s_pos[:, None]).astype(np.float64)


def _nll_rows(logits, mask, target):
    """Per-row ``-log softmax(logits)[target]`` and its gradient."""
    z = np.where(mask, logits, -np.inf)
    zmax = np.max(z, axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
    rows = np.arange(len(target))
    value = lse - logits[rows, target]
    grad = softmax_rows(logits, 1.0, mask)
    grad[rows, target] -= 1.0
    return value, grad


def contrastive_loss(inputs, alpha=None):
    """Two-sided InfoNCE with gated generated negatives.

    For pair ``i``: the text-anchored term contrasts ``s_it[i, i]`` with
    the other images' scores for text ``i``; the image-anchored term
    contrasts it with the other texts and with every generated negative
    whose gate is 1. Returns ``(mean loss, d/ds_it, d/ds_gen or None)``.
    """
    s, tau = inputs.s_it, inputs.tau
    N = s.shape[0]
    target = np.arange(N)

    col_value, col_grad = _nll_rows(s.T / tau, np.ones_like(s, bool), target)
    d_it = col_grad.T / (tau * N)

    if inputs.s_gen is None:
        row_value, row_grad = _nll_rows(s / tau, np.ones_like(s, bool), target)
        d_it += row_grad / (tau * N)
        d_gen = None
    else:
        if alpha is None:
            alpha = alpha_gate(inputs.s_gen, inputs.s_pos)
        logits = np.concatenate([s, inputs.s_gen], axis=1) / tau
        mask = np.concatenate([np.ones_like(s, bool), np.asarray(alpha) > 0], axis=1)
        row_value, row_grad = _nll_rows(logits, mask, target)
        d_it += row_grad[:, :N] / (tau * N)
        d_gen = row_grad[:, N:] / (tau * N)
    return float(np.mean(col_value + row_value)), d_it, d_gen


def loss_asym1(inputs, alpha=None):
    """Objective for captions with redundant information: original pairs,
    in-batch negatives and noised-caption negatives."""
    return contrastive_loss(inputs, alpha)


def loss_asym23(inputs, alpha=None):
    """Same objective on generated positives (concatenated or truncated
    captions) against noised copies of those positives."""
    return contrastive_loss(inputs, alpha)


def loss_total(l1, l23):
    return 0.5 * l1 + 0.5 * l23


def triplet_loss(s_it, margin=0.2):
    """Hinge loss against the hardest in-batch negative, both directions.

    ``mean_i([max_{j!=i} s[i,j] - s[i,i] + m]_+ + [max_{j!=i} s[j,i] - s[i,i] + m]_+)``.
    Ties among hardest negatives go to the lowest index. Returns
    ``(value, d/ds_it)``.
    """
    if not margin > 0:
        raise ConfigError("triplet margin must be positive")
    s = np.asarray(s_it, dtype=np.float64)
    N = s.shape[0]
    if N < 2:
        return 0.0, np.zeros_like(s)
    off = np.where(np.eye(N, dtype=bool), -np.inf, s)
    rows = np.arange(N)
    hard_text = np.argmax(off, axis=1)       # hardest caption for image i
    hard_image = np.argmax(off, axis=0)      # hardest image for caption i
    diag = np.diag(s)
    h_row = s[rows, hard_text] - diag + margin
    h_col = s[hard_image, rows] - diag + margin
    grad = np.zeros_like(s)
    act_r = h_row > 0
    act_c = h_col > 0
    np.add.at(grad, (rows[act_r], hard_text[act_r]), 1.0 / N)
    np.add.at(grad, (hard_image[act_c], rows[act_c]), 1.0 / N)
    grad[rows, rows] -= (act_r.astype(float) + act_c.astype(float)) / N
    value = float(np.sum(np.maximum(h_row, 0.0) + np.maximum(h_col, 0.0)) / N)
    return value, grad
