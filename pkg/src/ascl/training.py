"""Training loop: batches -> generated samples -> scores -> loss -> Adam."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import matcher
from .config import TrainConfig
from .datastore import TextFeatures, make_batches
from .errors import ConfigError, NumericError
from .loss import LossInputs, contrastive_loss, loss_total, triplet_loss
from .numerics import Adam

log = logging.getLogger(__name__)

# stream tags for per-pair generator seeds
_NEG, _POS, _POS_NEG = 1, 2, 3


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    @property
    def losses(self):
        return [r["loss"] for r in self.records]


def init_params(config):
    return matcher.ModelParams.init(
        config.dim, config.heads, seed=config.seed,
        tie_directions=config.tie_directions, lam=config.lam, u1=config.u1,
        positional_encoding=config.positional_encoding,
        positional_scale=config.positional_scale,
        learn_lambda=config.learn_lambda, fusion=config.ablation != "no_mf")


def _check_dataset(dataset, config):
    if dataset.dim != config.dim:
        raise ConfigError(f"dataset dim {dataset.dim} != model.dim {config.dim}")
    if config.regions and any(img.regions.shape[0] != config.regions for img in dataset.images):
        raise ConfigError(f"model.regions={config.regions} but the dataset has other region counts")
    n_train = len(dataset.split_indices("train"))
    if n_train < config.batch_size:
        raise ConfigError(f"{n_train} training pairs, fewer than train.batch_size={config.batch_size}")


def _noised(text, noise, seed):
    return TextFeatures(f"{text.text_id}~", text.parent_image, noise.apply(text.words, seed), text.split)


def batch_objective(batch, params, config, epoch, siblings):
    """Loss value and parameter gradients for one batch."""
    seed = config.seed
    ablation = config.ablation
    texts = list(batch.texts)
    N = len(texts)
    use_neg = ablation in ("full", "no_pos", "no_mf")
    use_pos = ablation in ("full", "no_neg", "no_mf")
    noise, positive = config.noise, config.positive
    keys = [int(j) for j in batch.caption_indices]

    blocks = {"orig": (0, N)}
    all_texts = list(texts)
    if use_neg:
        blocks["neg"] = (len(all_texts), len(all_texts) + N)
        all_texts += [_noised(t, noise, (seed, epoch, j, _NEG)) for t, j in zip(texts, keys)]
    if use_pos:
        pos = [positive.apply(t, [s for s in siblings[t.parent_image] if s.text_id != t.text_id],
                              (seed, epoch, j, _POS)) for t, j in zip(texts, keys)]
        blocks["pos"] = (len(all_texts), len(all_texts) + N)
        all_texts += pos
        if use_neg:
            blocks["pos_neg"] = (len(all_texts), len(all_texts) + N)
            all_texts += [_noised(t, noise, (seed, epoch, j, _POS_NEG)) for t, j in zip(pos, keys)]

    S, cache = matcher.forward(batch.images, all_texts, params, strict=False)
    dS = np.zeros_like(S)

    def block(name):
        a, b = blocks[name]
        return S[:, a:b]

    def add_grad(name, g):
        if g is not None:
            a, b = blocks[name]
            dS[:, a:b] += g

    if ablation == "triplet":
        value, g = triplet_loss(block("orig"), config.margin)
        add_grad("orig", g)
    else:
        l1, g_it, g_gen = contrastive_loss(LossInputs(block("orig"), block("neg") if use_neg else None,
                                                      config.tau))
        if use_pos:
            l23, g_pit, g_pgen = contrastive_loss(LossInputs(
                block("pos"), block("pos_neg") if use_neg else None, config.tau))
            value = loss_total(l1, l23)
            add_grad("orig", 0.5 * g_it)
            add_grad("neg", None if g_gen is None else 0.5 * g_gen)
            add_grad("pos", 0.5 * g_pit)
            add_grad("pos_neg", None if g_pgen is None else 0.5 * g_pgen)
        else:
            value = l1
            add_grad("orig", g_it)
            add_grad("neg", g_gen)
    return value, matcher.backward(dS, cache)


def train(dataset, config=None, *, params=None, on_epoch=None):
    """Train on the ``train`` split. Returns ``(params, TrainLog)``."""
    config = config or TrainConfig()
    _check_dataset(dataset, config)
    params = init_params(config) if params is None else params
    named = params.named()
    opt = Adam(lr=config.lr)
    groups = dataset.caption_groups("train")
    siblings = {img_id: [dataset.captions[j] for j in idx] for img_id, idx in groups.items()}
    tlog = TrainLog()

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        batches = make_batches(dataset, config.batch_size, seed=(config.seed, epoch), shuffle=True)
        total = 0.0
        for batch in batches:
            value, grads = batch_objective(batch, params, config, epoch, siblings)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError(f"non-finite loss or gradient in epoch {epoch}")
            opt.step(named, grads, lr=lr)
            params.clip_()
            total += value
        mean = total / len(batches)
        tlog.append(epoch=epoch, loss=mean, lr=lr)
        log.debug("epoch %d loss %.6f lr %.3g", epoch, mean, lr)
        if on_epoch is not None:
            on_epoch(epoch, mean, params)
    return params, tlog
