import json
import subprocess
import sys

import numpy as np
import pytest

from ascl.cli import main
from ascl.datastore import load_features
from ascl.modelio import load_model, save_model
from ascl.training import init_params
from ascl.config import TrainConfig


@pytest.fixture(scope="module")
def data_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.ascl"
    assert main(["synth", "--out", str(path), "--clusters", "8", "--dim", "16", "--seed", "2"]) == 0
    return path


def conf(tmp_path, text="model.dim = 16\nmodel.heads = 2\ntrain.epochs = 2\n"):
    p = tmp_path / "c.conf"
    p.write_text(text)
    return str(p)


def test_synth_writes_dataset(data_path, capsys):
    ds = load_features(data_path)
    assert len(ds.images) == 8 and ds.dim == 16


def test_train_eval_score_round(tmp_path, data_path, capsys):
    model, log = tmp_path / "m.npz", tmp_path / "log.jsonl"
    rc = main(["train", "--config", conf(tmp_path), "--set", "train.seed=4", "--data", str(data_path),
               "--out", str(model), "--log", str(log)])
    assert rc == 0
    lines = log.read_text().splitlines()
    assert json.loads(lines[0])["config"]["train.seed"] == 4
    assert len(lines) == 3
    params, cfg = load_model(model)
    assert cfg.seed == 4 and cfg.dim == 16

    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--data", str(data_path), "--lengths"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["train.epochs"] == 2
    assert len(report["length_buckets"]) == 3

    out = tmp_path / "s.csv"
    assert main(["score", "--model", str(model), "--data", str(data_path), "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 9 and rows[0].startswith("image_id,")


def test_echoed_config_reproduces_run(tmp_path, data_path):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    main(["train", "--config", conf(tmp_path), "--data", str(data_path), "--out", str(a)])
    _, cfg = load_model(a)
    echo = tmp_path / "echo.conf"
    echo.write_text(cfg.dumps())
    main(["train", "--config", str(echo), "--data", str(data_path), "--out", str(b)])
    pa, pb = load_model(a)[0], load_model(b)[0]
    for name, arr in pa.named().items():
        assert np.array_equal(arr, pb.named()[name])


def test_model_file_round_trip(tmp_path):
    for kw in ({}, {"tie_directions": True, "learn_lambda": True}):
        cfg = TrainConfig(dim=8, heads=2, **kw)
        params = init_params(cfg)
        save_model(tmp_path / "m.npz", params, cfg)
        back, back_cfg = load_model(tmp_path / "m.npz")
        assert back_cfg == cfg and back.tied == params.tied and back.learn_lambda == params.learn_lambda
        for name, arr in params.named().items():
            assert np.array_equal(arr, back.named()[name])


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "global.xw" in out and "ok" in out


def test_ablate_command(tmp_path, data_path, capsys):
    out = tmp_path / "ab.json"
    rc = main(["ablate", "--config", conf(tmp_path, "model.dim = 16\nmodel.heads = 2\ntrain.epochs = 1\n"),
               "--data", str(data_path), "--variants", "full,no_mf", "--out", str(out)])
    assert rc == 0
    table = capsys.readouterr().out
    assert "no_mf" in table
    assert set(json.loads(out.read_text())["variants"]) == {"full", "no_mf"}


@pytest.mark.parametrize("argv", [
    ["eval", "--model", "/nonexistent.npz", "--data", "/nonexistent.ascl"],
    ["train", "--data", "/nonexistent.ascl", "--out", "/tmp/x.npz"],
])
def test_missing_files_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_bad_inputs_exit_2(tmp_path, data_path):
    junk = tmp_path / "junk.ascl"
    junk.write_bytes(b"JUNK")
    assert main(["train", "--data", str(junk), "--out", str(tmp_path / "m.npz")]) == 2
    assert main(["train", "--data", str(data_path), "--out", str(tmp_path / "m.npz"),
                 "--set", "train.nope=1"]) == 2
    assert main(["ablate", "--data", str(data_path), "--variants", "full,bogus"]) == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_numeric_failure_exit_3(tmp_path, data_path):
    cfg = TrainConfig(dim=16, heads=2, epochs=1)
    params = init_params(cfg)
    params.glob.xw[:] = np.inf
    save_model(tmp_path / "bad.npz", params, cfg)
    assert main(["eval", "--model", str(tmp_path / "bad.npz"), "--data", str(data_path)]) == 3


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "ascl.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
