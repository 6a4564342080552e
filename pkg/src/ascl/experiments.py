"""Whole-pipeline checks: finite-difference gradient audit and ablation runs."""

from __future__ import annotations

import numpy as np

from .config import ABLATIONS, TrainConfig
from .datastore import Batch, ImageFeatures, TextFeatures
from .evaluation import evaluate
from .numerics import finite_diff_grad, max_relative_error
from .training import batch_objective, init_params, train

GRADCHECK_TOL = 1e-4


def tiny_batch(dim=8, regions=3, words=4, pairs=2, seed=0):
    """Random batch with two captions per image so concatenation positives exist.

    Returns ``(batch, siblings)``.
    """
    rng = np.random.default_rng(seed)
    images, texts, siblings = [], [], {}
    for i in range(pairs):
        img = ImageFeatures(f"i{i}", rng.standard_normal((regions, dim)), rng.standard_normal(dim))
        caps = [TextFeatures(f"i{i}_c{j}", img.image_id, rng.standard_normal((words, dim)))
                for j in range(2)]
        images.append(img)
        texts.append(caps[0])
        siblings[img.image_id] = caps
    return Batch(images, texts, np.arange(pairs)), siblings


def gradient_check(dim=8, heads=2, seed=0, *, regions=3, words=4, pairs=2, h=1e-4,
                   config=None):
    """Max relative error between analytic and central-difference gradients
    of the training loss, per named parameter group."""
    config = config or TrainConfig(dim=dim, heads=heads, seed=seed, batch_size=pairs)
    batch, siblings = tiny_batch(dim, regions, words, pairs, seed)
    params = init_params(config)
    _, grads = batch_objective(batch, params, config, 0, siblings)
    out = {}
    for name, arr in params.named().items():
        numeric = finite_diff_grad(lambda _: batch_objective(batch, params, config, 0, siblings)[0], arr, h)
        out[name] = max_relative_error(grads[name], numeric)
    return out


def run_ablation(dataset, config=None, variants=ABLATIONS, split="test", lengths=True):
    """Train every variant on the same data and seed. Returns ``{variant: EvalReport}``."""
    config = config or TrainConfig()
    out = {}
    for v in variants:
        cfg = config.with_overrides({"train.ablation": v})
        params, _ = train(dataset, cfg)
        out[v] = evaluate(params, dataset, split, lengths=lengths, diagnostics=False)
    return out


def ablation_table(reports):
    """Plain-text comparison: one row per variant."""
    lines = [f"{'variant':<8} {'rsum':>7} {'i2t_r1':>7} {'t2i_r1':>7}"]
    for v, r in reports.items():
        lines.append(f"{v:<8} {r.rsum:7.4f} {r.i2t['r1']:7.4f} {r.t2i['r1']:7.4f}")
    return "\n".join(lines)
