import numpy as np
import pytest

from ascl import matcher
from ascl.config import TrainConfig
from ascl.datastore import SynthConfig, generate_synthetic, make_batches
from ascl.errors import ConfigError, NumericError
from ascl.evaluation import eval_sets
from ascl.experiments import gradient_check, tiny_batch
from ascl.loss import LossInputs, contrastive_loss
from ascl.training import batch_objective, init_params, train


@pytest.fixture(scope="module")
def clean_data():
    return generate_synthetic(SynthConfig(clusters=8, dim=32, noise=0.0, shared_concepts=24), 0)


def small_config(**kw):
    base = dict(dim=32, heads=4, epochs=12, batch_size=8, lr=0.01)
    base.update(kw)
    return TrainConfig(**base)


def test_no_pn_is_plain_in_batch_infonce():
    cfg = TrainConfig(dim=8, heads=2, batch_size=2, ablation="no_pn")
    batch, siblings = tiny_batch()
    params = init_params(cfg)
    value, _ = batch_objective(batch, params, cfg, 0, siblings)
    S, _ = matcher.forward(batch.images, batch.texts, params)
    assert value == pytest.approx(contrastive_loss(LossInputs(S, None, cfg.tau))[0], abs=1e-12)


def test_no_mf_turns_fusion_off():
    assert not init_params(TrainConfig(ablation="no_mf")).fusion
    assert init_params(TrainConfig()).fusion


@pytest.mark.parametrize("ablation", ["full", "no_pos", "no_neg", "triplet"])
def test_training_gradients_match_finite_differences(ablation):
    cfg = TrainConfig(dim=8, heads=2, batch_size=2, ablation=ablation, seed=3)
    assert max(gradient_check(config=cfg).values()) <= 1e-4


def test_loss_falls_and_runs_repeat(clean_data):
    cfg = small_config()
    _, log_a = train(clean_data, cfg)
    _, log_b = train(clean_data, cfg)
    assert log_a.losses[-1] < log_a.losses[0]
    assert log_a.losses == log_b.losses
    assert [r["lr"] for r in log_a.records[9:11]] == pytest.approx([0.01, 0.009])
    assert log_a.to_jsonl().count("\n") == cfg.epochs


def test_trained_diagonal_dominates_on_clean_data(clean_data):
    params, _ = train(clean_data, small_config(epochs=20))
    images, texts, parent = eval_sets(clean_data, "test")
    assert parent.tolist() == list(range(len(images)))
    S = matcher.score_matrix(images, texts, params)
    off = np.where(np.eye(len(S), dtype=bool), -np.inf, S)
    assert np.all(np.diag(S) > off.max(axis=1))


def test_rejects_mismatched_data(clean_data):
    with pytest.raises(ConfigError):
        train(clean_data, TrainConfig(dim=16, heads=4, epochs=1))
    with pytest.raises(ConfigError):
        train(clean_data, small_config(regions=5, epochs=1))
    with pytest.raises(ConfigError):
        train(clean_data, small_config(batch_size=100, epochs=1))


def test_non_finite_training_raises(clean_data):
    params = init_params(small_config())
    params.glob.xw[:] = np.nan
    with pytest.raises(NumericError):
        train(clean_data, small_config(epochs=1), params=params)


def test_batches_follow_seed_and_epoch(clean_data):
    a = make_batches(clean_data, 8, seed=(0, 1))
    b = make_batches(clean_data, 8, seed=(0, 2))
    assert [x.caption_indices.tolist() for x in a] != [x.caption_indices.tolist() for x in b]
