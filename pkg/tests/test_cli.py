import json

import numpy as np
import pytest

from adb.cli import main
from adb.data_io import load_dataset, load_model


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ds.csv"
    assert run("synth", "--classes", 5, "--per-class", 100, "--dim", 16, "--seed", 1, "--out", path) == 0
    return path


@pytest.fixture(scope="module")
def trained_dir(synth_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("train", "--data", synth_csv, "--out-dir", out, "--seed", 2, "--known-ratio", 0.6,
               "--max-epochs", 30) == 0
    return out


class TestSynth:
    def test_row_count(self, synth_csv):
        assert len(synth_csv.read_text().splitlines()) == 501

    def test_missing_classes(self, tmp_path, capsys):
        assert run("synth", "--per-class", 3, "--out", tmp_path / "x.csv") == 2
        assert "--classes" in capsys.readouterr().err

    def test_deterministic(self, synth_csv, tmp_path):
        run("synth", "--classes", 5, "--per-class", 100, "--dim", 16, "--seed", 1, "--out", tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == synth_csv.read_bytes()

    def test_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADB_SEED", "1")
        run("synth", "--classes", 5, "--per-class", 100, "--dim", 16, "--out", tmp_path / "env.csv")
        monkeypatch.delenv("ADB_SEED")
        run("synth", "--classes", 5, "--per-class", 100, "--dim", 16, "--seed", 1, "--out", tmp_path / "flag.csv")
        assert (tmp_path / "env.csv").read_bytes() == (tmp_path / "flag.csv").read_bytes()

    def test_bad_noise_is_argument_error(self, tmp_path):
        assert run("synth", "--classes", 3, "--noise-sigma", 0, "--out", tmp_path / "x.csv") == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("synth", "--classes", 3, "--out", blocker / "x.csv") == 1


class TestTrainEval:
    def test_outputs(self, trained_dir):
        for name in ("model.json", "manifest.json", "curve.csv", "config.json", "test.csv", "representation.json"):
            assert (trained_dir / name).exists(), name
        manifest = json.loads((trained_dir / "manifest.json").read_text())
        assert manifest["known_ratio"] == 0.6 and len(manifest["known_classes"]) == 3
        assert load_model(trained_dir / "model.json").dim == 16

    def test_known_ratio_echo(self, synth_csv, tmp_path):
        assert run("train", "--data", synth_csv, "--out-dir", tmp_path, "--known-ratio", 0.25, "--max-epochs", 5) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["known_ratio"] == 0.25

    def test_eval_writes_metrics(self, trained_dir, tmp_path):
        assert run("eval", "--model-dir", trained_dir, "--out-dir", tmp_path) == 0
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        assert set(metrics) >= {"accuracy", "f1_all", "f1_known", "f1_open", "per_class_f1"}
        preds = (tmp_path / "predictions.csv").read_text().splitlines()
        assert preds[0] == "index,gold,pred,nearest,distance,margin"
        assert len(preds) - 1 == len(load_dataset(trained_dir / "test.csv"))
        assert (tmp_path / "report.csv").read_text().startswith("run,accuracy,f1_all,f1_known,f1_open\n0,")

    def test_eval_msp(self, trained_dir, tmp_path):
        assert run("eval", "--model-dir", trained_dir, "--method", "msp", "--threshold", 0.5, "--out-dir", tmp_path) == 0
        assert (tmp_path / "metrics.json").exists()

    def test_skip_rep_perfect_round_trip(self, tmp_path):
        # test points placed inside the learned balls
        data = tmp_path / "ds.csv"
        run("synth", "--classes", 4, "--per-class", 60, "--dim", 3, "--seed", 5, "--out", data)
        out = tmp_path / "run"
        assert run("train", "--data", data, "--out-dir", out, "--known-ratio", 1.0, "--skip-rep") == 0
        assert not (out / "representation.json").exists()
        model = load_model(out / "model.json")
        rows = ["label,f0,f1,f2"]
        for name, c, r in zip(model.label_map.names, model.centroids.c, model.radii):
            for direction in np.eye(3):
                rows.append(",".join([name, *map(repr, (c + 0.5 * r * direction).tolist())]))
        (tmp_path / "inside.csv").write_text("\n".join(rows) + "\n")
        assert run("eval", "--model-dir", out, "--data", tmp_path / "inside.csv", "--out-dir", tmp_path / "ev") == 0
        assert json.loads((tmp_path / "ev" / "metrics.json").read_text())["accuracy"] == 1.0

    def test_missing_model(self, tmp_path, capsys):
        assert run("eval", "--model-dir", tmp_path / "nowhere") == 1
        assert "nowhere" in capsys.readouterr().err

    def test_dimension_mismatch(self, trained_dir, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("label,f0,f1\nclass_0,1,2\n")
        assert run("eval", "--model-dir", trained_dir, "--data", tmp_path / "bad.csv", "--out-dir", tmp_path) == 1
        err = capsys.readouterr().err
        assert "D=16" in err and "D=2" in err

    def test_config_echo_reproduces(self, synth_csv, trained_dir, tmp_path):
        assert run("train", "--data", synth_csv, "--out-dir", tmp_path, "--config", trained_dir / "config.json") == 0
        for name in ("model.json", "manifest.json", "curve.csv", "representation.json", "test.csv"):
            assert (tmp_path / name).read_bytes() == (trained_dir / name).read_bytes(), name

    def test_flags_override_config(self, synth_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"known_ratio": 0.2, "max_epochs": 3, "seed": 4}))
        assert run("train", "--data", synth_csv, "--out-dir", tmp_path / "o", "--config", cfg, "--known-ratio", 0.8) == 0
        echoed = json.loads((tmp_path / "o" / "config.json").read_text())
        assert echoed["known_ratio"] == 0.8 and echoed["max_epochs"] == 3 and echoed["seed"] == 4


class TestExperimentAndSweeps:
    def test_experiment_rows(self, synth_csv, tmp_path):
        assert run("experiment", "--data", synth_csv, "--out-dir", tmp_path, "--runs", 3, "--known-ratio", 0.25,
                   "--max-epochs", 10) == 0
        rows = (tmp_path / "report.csv").read_text().splitlines()
        assert rows[0] == "run,accuracy,f1_all,f1_known,f1_open" and len(rows) == 4
        report = json.loads((tmp_path / "report.json").read_text())
        assert len(report["runs"]) == 3 and report["config"]["known_ratio"] == 0.25

    def test_sweep_boundary(self, trained_dir, tmp_path):
        assert run("sweep", "boundary", "--model-dir", trained_dir, "--ratios", "0.5,1.0,2.0", "--out-dir", tmp_path) == 0
        assert len((tmp_path / "sweep_boundary.csv").read_text().splitlines()) == 4

    def test_sweep_labeled(self, synth_csv, tmp_path):
        assert run("sweep", "labeled", "--data", synth_csv, "--out-dir", tmp_path, "--runs", 1,
                   "--ratios", "0.2,0.4,0.6,0.8,1.0", "--max-epochs", 5) == 0
        assert len((tmp_path / "sweep_labeled.csv").read_text().splitlines()) == 6

    def test_split(self, synth_csv, tmp_path):
        assert run("split", "--data", synth_csv, "--out-dir", tmp_path, "--known-ratio", 0.4, "--seed", 3) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["known_classes"]) == 2
        total = sum(manifest["counts"][k] for k in ("train", "validation", "test_known"))
        assert total == 200


def test_unseen_labels_scored_as_open(trained_dir, tmp_path):
    row = ",".join(["never_seen", *["0.0"] * 16])
    (tmp_path / "new.csv").write_text("label," + ",".join(f"f{i}" for i in range(16)) + "\n" + row + "\n")
    assert run("eval", "--model-dir", trained_dir, "--data", tmp_path / "new.csv", "--out-dir", tmp_path) == 0
    assert (tmp_path / "predictions.csv").read_text().splitlines()[1].split(",")[1] == "open"
