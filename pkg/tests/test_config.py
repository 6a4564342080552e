import pytest
from hypothesis import given
from hypothesis import strategies as st

from ascl.config import TrainConfig, load_config, parse_config_text, parse_overrides
from ascl.errors import ConfigError


def test_defaults():
    c = TrainConfig()
    assert (c.tau, c.u1, c.batch_size, c.epochs, c.ablation) == (0.05, 0.8, 8, 50, "full")


def test_text_round_trip(tmp_path):
    c = TrainConfig(lr=3e-4, ablation="no_pos", learn_lambda=True, noise_kind="shuffle")
    path = tmp_path / "c.conf"
    path.write_text(c.dumps())
    assert load_config(path) == c


@given(st.floats(1e-6, 1.0), st.integers(2, 64), st.sampled_from(["full", "no_pn", "triplet"]))
def test_dict_round_trip(lr, n, ablation):
    c = TrainConfig(lr=lr, batch_size=n, ablation=ablation)
    assert TrainConfig.from_dict(c.to_dict()) == c
    assert TrainConfig.from_dict(parse_config_text(c.dumps())) == c


def test_parse_comments_and_overrides(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("# header\ntrain.epochs = 3  # short\n\nloss.tau=0.1\n")
    c = load_config(path, parse_overrides(["train.epochs=5", "model.positional_encoding=off"]))
    assert (c.epochs, c.tau, c.positional_encoding) == (5, 0.1, False)


@pytest.mark.parametrize("text", ["nonsense", "a.b = 1\na.b = 2", "train.bogus = 1", "train.epochs = x",
                                  "train.ablation = no_everything", "loss.tau = 0", "model.heads = 3",
                                  "noise.kind = blur", "model.learn_lambda = maybe"])
def test_bad_config_text(text):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(parse_config_text(text))


def test_override_must_be_key_value():
    with pytest.raises(ConfigError):
        parse_overrides(["train.epochs"])


def test_lr_schedules():
    c = TrainConfig(lr=1.0)
    assert [c.lr_at(e) for e in (0, 9, 10, 19, 20)] == pytest.approx([1, 1, 0.9, 0.9, 0.81])
    c = TrainConfig(lr=1.0, lr_schedule="decay_0.1_per10")
    assert [c.lr_at(e) for e in (9, 10, 25)] == pytest.approx([1, 0.1, 0.01])
    assert TrainConfig(lr=0.5, lr_schedule="constant").lr_at(99) == 0.5
