import csv
import json
import os

import numpy as np
import pytest

from imit2d import config as cfgmod
from imit2d.cli import git_blob_hash, main
from imit2d.errors import ConfigError


def run(tmp_path, *argv):
    return main(["--workdir", str(tmp_path), *argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["--workdir", str(root), "gen-data", "--n", "6", "--out", "data"]) == 0
    return root


def _manifest(path):
    with open(os.path.join(path, "manifest.json")) as fp:
        return json.load(fp)


# -- config ---------------------------------------------------------------------------------

def test_defaults_match_training_tables():
    cfg = cfgmod.make_config({}, env={})
    d = cfgmod.train_config(cfg, "diffusion")
    assert (d.learning_rate, d.epochs, d.weight_decay) == (2e-5, 1000, 0.0)
    a = cfgmod.train_config(cfg, "ae-fcr")
    assert (a.weight_decay, a.epochs) == (0.75, 500)
    f = cfgmod.train_config(cfg, "fcr")
    assert (f.learning_rate, f.epochs) == (1e-3, 1000)
    assert cfg["schedule"]["T"] == 10
    assert cfg["closed_loop"]["success_distance"] == 1.4


def test_unknown_nested_key_named():
    with pytest.raises(ConfigError, match="train.fcr.momentum"):
        cfgmod.make_config({"train": {"fcr": {"momentum": 0.9}}}, env={})


def test_wrong_type_and_version_rejected():
    with pytest.raises(ConfigError, match="ball.gravity"):
        cfgmod.make_config({"ball": {"gravity": "high"}}, env={})
    with pytest.raises(ConfigError, match="schema_version"):
        cfgmod.make_config({"schema_version": 99}, env={})
    with pytest.raises(ConfigError):
        cfgmod.make_config({"train": {"fcr": {"learning_rate": -1.0}}}, env={})


def test_seed_env_override():
    assert cfgmod.make_config({"seed": 3}, env={"IMIT2D_SEED": "11"})["seed"] == 11
    assert cfgmod.make_config({"seed": 3}, env={})["seed"] == 3
    with pytest.raises(ConfigError):
        cfgmod.make_config({}, env={"IMIT2D_SEED": "x"})


def test_config_hash_tracks_content():
    a = cfgmod.make_config({}, env={})
    b = cfgmod.make_config({"seed": 1}, env={})
    assert cfgmod.config_hash(a) == cfgmod.config_hash(cfgmod.make_config({}, env={}))
    assert cfgmod.config_hash(a) != cfgmod.config_hash(b)


def test_git_blob_hash_reference():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


# -- gen-data ----------------------------------------------------------------------------------

def test_gen_data_writes_manifest(tmp_path, monkeypatch):
    monkeypatch.delenv("IMIT2D_SEED", raising=False)
    assert run(tmp_path, "gen-data", "--n", "10", "--out", "d1") == 0
    files = sorted(f for f in os.listdir(tmp_path / "d1") if f.endswith(".ep"))
    assert len(files) == 10
    m = _manifest(tmp_path / "d1")
    assert len(m["outputs"]) == 10
    assert m["seed"] == 0 and len(m["config_hash"]) == 64
    # rerun: identical content hashes
    assert run(tmp_path, "gen-data", "--n", "10", "--out", "d2") == 0
    assert [e["sha1"] for e in _manifest(tmp_path / "d2")["outputs"]] == [e["sha1"] for e in m["outputs"]]


def test_gen_data_seed_env_changes_data(tmp_path, monkeypatch):
    monkeypatch.setenv("IMIT2D_SEED", "5")
    assert run(tmp_path, "gen-data", "--n", "2", "--out", "d") == 0
    m = _manifest(tmp_path / "d")
    assert m["seed"] == 5
    monkeypatch.delenv("IMIT2D_SEED")
    assert run(tmp_path, "gen-data", "--n", "2", "--out", "e") == 0
    assert _manifest(tmp_path / "e")["outputs"][0]["sha1"] != m["outputs"][0]["sha1"]


def test_invalid_config_key_exit_2(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"schema_version": 1, "launch": {"spin": [0, 1]}}))
    code = main(["--workdir", str(tmp_path), "--config", "c.json", "gen-data", "--n", "1", "--out", "d"])
    assert code == 2
    assert "launch.spin" in capsys.readouterr().err


def test_malformed_json_exit_2(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert main(["--workdir", str(tmp_path), "--config", "c.json", "gen-data", "--n", "1", "--out", "d"]) == 2


def test_unwritable_output_exit_3(tmp_path):
    (tmp_path / "blocker").write_text("file, not a directory")
    assert run(tmp_path, "gen-data", "--n", "1", "--out", "blocker/sub") == 3


# -- train -------------------------------------------------------------------------------------

def test_train_writes_checkpoint_and_loss(dataset):
    code = main(["--workdir", str(dataset), "train", "--policy", "fcr", "--data", "data", "--range", ":5",
                 "--out", "fcr", "--epochs", "4"])
    assert code == 0
    with open(dataset / "fcr" / "loss.csv") as fp:
        rows = list(csv.DictReader(fp))
    assert len(rows) == 4
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2, 3]
    m = _manifest(dataset / "fcr")
    assert {e["path"] for e in m["outputs"]} == {"policy.ckpt", "loss.csv"}


def test_train_tspace_and_ae(dataset):
    assert main(["--workdir", str(dataset), "train", "--policy", "ae-fcr", "--mode", "tspace", "--data", "data",
                 "--out", "ae", "--epochs", "2"]) == 0
    from imit2d.policy import Policy

    p = Policy.load(str(dataset / "ae" / "policy.ckpt"))
    assert (p.kind, p.mode, p.action) == ("ae-fcr", "post2d", "task")
    assert p.meta["train"]["weight_decay"] == 0.75


def test_train_empty_dataset_exit_4(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run(tmp_path, "train", "--policy", "fcr", "--data", "empty", "--out", "m") == 4


def test_train_missing_dataset_exit_3(tmp_path):
    assert run(tmp_path, "train", "--policy", "fcr", "--data", "nowhere", "--out", "m") == 3


# -- eval ----------------------------------------------------------------------------------------

def test_offline_oracle_zero_row(dataset):
    assert main(["--workdir", str(dataset), "eval", "--offline", "--checkpoint", "oracle", "--data", "data",
                 "--range", "5:", "--out", "off"]) == 0
    with open(dataset / "off" / "offline.csv") as fp:
        (row,) = list(csv.DictReader(fp))
    assert row["policy"] == "Oracle"
    for k in ("rmse", "dtw", "icp"):
        assert float(row[k]) < 1e-9
    assert float(row["jerk"]) == pytest.approx(float(row["gt_jerk"]), rel=1e-9)


def test_closed_loop_hybrid_report(dataset):
    assert main(["--workdir", str(dataset), "eval", "--closed-loop", "hybrid", "--checkpoint", "expert",
                 "--data", "data", "--range", ":3", "--out", "hyb"]) == 0
    with open(dataset / "hyb" / "closed_loop.json") as fp:
        rep = json.load(fp)
    s = rep["policies"]["expert"]
    assert s["episodes"] == 3
    lo, hi = s["wilson95"]
    assert 0.0 <= lo <= s["success_rate"] <= hi <= 1.0
    assert all("min_distance" in e for e in s["episodes_detail"])
    assert "estimator" not in s


def test_closed_loop_live_adds_estimator(dataset):
    assert main(["--workdir", str(dataset), "eval", "--closed-loop", "live", "--checkpoint", "expert",
                 "--data", "data", "--range", ":2", "--out", "live"]) == 0
    with open(dataset / "live" / "closed_loop.json") as fp:
        s = json.load(fp)["policies"]["expert"]
    assert {"mean_error_m", "max_error_m", "missing_estimates"} <= set(s["estimator"])


def test_eval_mode_mismatch_exit_5(dataset):
    main(["--workdir", str(dataset), "train", "--policy", "fcr", "--data", "data", "--out", "fcr_mm", "--epochs", "1"])
    code = main(["--workdir", str(dataset), "eval", "--offline", "--mode", "pre2d", "--checkpoint", "fcr_mm/policy.ckpt",
                 "--data", "data", "--out", "mm"])
    assert code == 5


def test_eval_garbage_checkpoint_exit_5(dataset):
    (dataset / "junk.ckpt").write_bytes(b"not a checkpoint at all")
    assert main(["--workdir", str(dataset), "eval", "--offline", "--checkpoint", "junk.ckpt", "--data", "data",
                 "--out", "j"]) == 5


def test_eval_deterministic(dataset):
    args = ["--workdir", str(dataset), "eval", "--closed-loop", "live", "--checkpoint", "expert", "--data", "data",
            "--range", ":2"]
    assert main(args + ["--out", "r1"]) == 0
    assert main(args + ["--out", "r2"]) == 0
    assert (dataset / "r1" / "closed_loop.json").read_bytes() == (dataset / "r2" / "closed_loop.json").read_bytes()


# -- extraction demo ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    assert main(["--workdir", str(root), "make-demo", "--out", "demo", "--rallies", "3"]) == 0
    return root


def test_extract_demo_report(demo):
    assert main(["--workdir", str(demo), "extract-demo", "--pcm", "demo/demo.wav", "--features",
                 "demo/demo_features.npz", "--out", "rep", "--hit-clips", "200"]) == 0
    with open(demo / "rep" / "report.json") as fp:
        rep = json.load(fp)
    assert rep["matchplay_accuracy"] >= 0.99
    assert rep["hit_accuracy"] >= 0.95
    segs = rep["segments"]
    assert all(a < b for a, b in segs)
    assert all(b1 < a2 for (_, b1), (a2, _) in zip(segs, segs[1:]))


def test_extract_demo_empty_pcm_exit_3(demo):
    (demo / "empty.wav").write_bytes(b"")
    assert main(["--workdir", str(demo), "extract-demo", "--pcm", "empty.wav", "--features",
                 "demo/demo_features.npz", "--out", "e"]) == 3


def test_extract_demo_zero_sample_wav_exit_3(demo):
    from imit2d.cli import write_pcm

    import wave

    with wave.open(str(demo / "silent.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"")
    assert main(["--workdir", str(demo), "extract-demo", "--pcm", "silent.wav", "--features",
                 "demo/demo_features.npz", "--out", "e"]) == 3
    # a valid round trip through the writer for comparison
    x = np.sin(np.linspace(0, 20, 1600))
    write_pcm(str(demo / "ok.wav"), x, 16000)
    assert os.path.getsize(demo / "ok.wav") > 44


def test_jobs_must_be_positive(tmp_path):
    assert run(tmp_path, "--jobs", "0", "gen-data", "--n", "1", "--out", "d") == 2
