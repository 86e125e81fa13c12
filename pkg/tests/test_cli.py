import csv
import json

import numpy as np
import pytest

from diabnet.cli import main
from diabnet.model import Model
from diabnet.pipeline import build_model, load_and_prepare, load_config
from diabnet.training import train
from tests.conftest import PIMA_CSV, ROOT

SINGLE_GRID = {
    "hidden_layer_options": [[16, 8, 4]],
    "activation_options": ["sigmoid"],
    "optimizer_options": ["adam"],
    "batch_size_options": [32],
}


def write_config(tmp_path, **sections):
    doc = json.loads((ROOT / "configs" / "pima.json").read_text())
    doc["dataset"]["path"] = str(PIMA_CSV)
    doc["output_dir"] = "out"
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key].update(value)
        else:
            doc[key] = value
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestInspect:
    def test_pima_summary(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["inspect", "--config", str(cfg)]) == 0
        assert "768 rows, 8 features, 268 positive / 500 negative" in capsys.readouterr().out
        summary = json.loads((tmp_path / "out" / "inspect.json").read_text())
        assert summary["rows"] == 768 and summary["positive"] == 268
        corr = read_csv(tmp_path / "out" / "correlation.csv")
        assert len(corr) == 9 and len(corr[0]) == 9

    def test_empty_body(self, tmp_path, capsys):
        data = tmp_path / "empty.csv"
        data.write_text(PIMA_CSV.read_text().splitlines()[0] + "\n")
        cfg = write_config(tmp_path, dataset={"path": str(data)})
        assert main(["inspect", "--config", str(cfg)]) == 0
        assert "0 rows" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nowhere.csv"
        cfg = write_config(tmp_path, dataset={"path": str(missing)})
        assert main(["inspect", "--config", str(cfg)]) != 0
        assert str(missing) in capsys.readouterr().err


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, train={"epochz": 3})
        assert main(["inspect", "--config", str(cfg)]) == 1
        assert "epochz" in capsys.readouterr().err

    def test_unknown_top_level_rejected(self, tmp_path):
        cfg = write_config(tmp_path, extra=1)
        assert main(["inspect", "--config", str(cfg)]) == 1

    def test_set_override(self, tmp_path):
        cfg = load_config(write_config(tmp_path), [("train.epochs", 7), ("seed", 3)])
        assert cfg.train.epochs == 7 and cfg.seed == 3

    def test_paths_relative_to_config(self):
        cfg = load_config(ROOT / "configs" / "pima.json")
        assert cfg.dataset.path.resolve() == PIMA_CSV.resolve()


class TestPreprocess:
    def test_split_sizes(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["preprocess", "--config", str(cfg)]) == 0
        summary = json.loads((tmp_path / "out" / "preprocess.json").read_text())
        assert summary["balanced_rows"] == 536
        assert summary["train_rows"] + summary["test_rows"] == 536
        assert summary["test_class_counts"] == [54, 54]


class TestTune:
    def test_singleton_grid_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, tune={"epochs": 2, "workers": 1, "grid": SINGLE_GRID})
        assert main(["tune", "--config", str(cfg), "--quiet", "--output-dir", str(tmp_path / "a")]) == 0
        assert main(["tune", "--config", str(cfg), "--quiet", "--output-dir", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "sweep.csv").read_bytes()
        assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
        rows = read_csv(tmp_path / "a" / "sweep.csv")
        assert len(rows) == 2
        best = json.loads((tmp_path / "a" / "best_config.json").read_text())
        assert best["hidden_sizes"] == [16, 8, 4] and len(best["fold_accuracies"]) == 5

    def test_train_from_best_config(self, tmp_path):
        cfg = write_config(tmp_path, tune={"epochs": 1, "workers": 1, "grid": SINGLE_GRID}, train={"epochs": 1})
        assert main(["tune", "--config", str(cfg), "--quiet"]) == 0
        best = tmp_path / "out" / "best_config.json"
        assert main(["train", "--config", str(cfg), "--best-config", str(best)]) == 0
        model = Model.load(tmp_path / "out" / "model.json")
        assert model.config.hidden_sizes == (16, 8, 4)


class TestTrainEvaluate:
    def test_one_epoch_history(self, tmp_path):
        cfg = write_config(tmp_path, train={"epochs": 1})
        assert main(["train", "--config", str(cfg)]) == 0
        rows = read_csv(tmp_path / "out" / "history.csv")
        assert rows[0] == ["epoch", "loss", "accuracy"]
        assert len(rows) == 2 and np.isfinite(float(rows[1][1]))

    def test_reload_predictions_bitwise(self, tmp_path):
        path = write_config(tmp_path, train={"epochs": 2})
        assert main(["train", "--config", str(path)]) == 0
        cfg = load_config(path)
        prep = load_and_prepare(cfg)
        fresh, _ = train(build_model(cfg, 8), prep.train, cfg.train_config())
        loaded = Model.load(tmp_path / "out" / "model.json")
        a_cls, a_p = fresh.predict(prep.test.features)
        b_cls, b_p = loaded.predict(prep.test.features)
        assert np.array_equal(a_cls, b_cls)
        assert a_p.tobytes() == b_p.tobytes()

    def test_evaluate_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path, train={"epochs": 2})
        assert main(["train", "--config", str(cfg)]) == 0
        assert main(["evaluate", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "0.8981" in out and "0.8929" in out and "0.9038" in out
        rows = read_csv(tmp_path / "out" / "report.csv")
        assert rows[0][2:5] == ["pima_accuracy", "pima_sensitivity", "pima_specificity"]
        mlfnn = next(r for r in rows if r[0] == "MLFNN")
        assert "0.8173" in mlfnn
        models = [r[0] for r in rows if r[1] == "local"]
        assert models == ["BPNN + BatchNorm", "KNN", "Logistic Regression"]
        md = (tmp_path / "out" / "report.md").read_text()
        assert "reported, not reproduced" in md

    def test_report_command(self, tmp_path, capsys):
        cfg = write_config(tmp_path, train={"epochs": 1})
        assert main(["train", "--config", str(cfg)]) == 0
        assert main(["evaluate", "--config", str(cfg)]) == 0
        first = (tmp_path / "out" / "report.csv").read_bytes()
        assert main(["report", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "report.csv").read_bytes() == first

    def test_dimension_mismatch(self, tmp_path, capsys):
        cfg = write_config(tmp_path, train={"epochs": 1})
        assert main(["train", "--config", str(cfg)]) == 0
        data = tmp_path / "narrow.csv"
        with open(PIMA_CSV) as src:
            lines = [",".join(l.rstrip("\n").split(",")[1:]) for l in src]
        data.write_text("\n".join(lines) + "\n")
        doc = json.loads(cfg.read_text())
        doc["dataset"]["path"] = str(data)
        doc["dataset"]["schema"]["feature_names"] = doc["dataset"]["schema"]["feature_names"][1:]
        cfg.write_text(json.dumps(doc))
        assert main(["evaluate", "--config", str(cfg), "--model", str(tmp_path / "out" / "model.json")]) == 1
        assert "ShapeError" in capsys.readouterr().err

    def test_divergence_exit(self, tmp_path, capsys):
        cfg = write_config(tmp_path, train={"epochs": 3, "learning_rate": 1e300, "optimizer": "sgd"},
                           model={"activation": "relu"})
        assert main(["train", "--config", str(cfg)]) == 1
        assert "epoch" in capsys.readouterr().err


class TestVisualize:
    def test_pima_projection(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["visualize", "--config", str(cfg)]) == 0
        rows = read_csv(tmp_path / "out" / "pca.csv")
        assert rows[0] == ["pc1", "pc2", "label"]
        assert len(rows) - 1 == 536
        labels = [r[2] for r in rows[1:]]
        assert labels.count("1") == labels.count("0") == 268

    def test_full_dims_complete(self, tmp_path):
        cfg = write_config(tmp_path, visualize={"dims": 8})
        assert main(["visualize", "--config", str(cfg)]) == 0
        rows = read_csv(tmp_path / "out" / "explained_variance.csv")[1:]
        assert len(rows) == 8
        assert abs(sum(float(r[2]) for r in rows) - 1.0) < 1e-9
        prep_total = sum(float(r[1]) for r in rows)
        assert abs(prep_total - 8.0) < 1e-9  # standardized columns each carry unit variance

    def test_constant_feature(self, tmp_path, capsys):
        data = tmp_path / "const.csv"
        lines = PIMA_CSV.read_text().splitlines()
        out = [lines[0]] + [",".join(["1"] + l.split(",")[1:]) for l in lines[1:]]
        data.write_text("\n".join(out) + "\n")
        cfg = write_config(tmp_path, dataset={"path": str(data)}, preprocess={"impute": False})
        assert main(["visualize", "--config", str(cfg)]) == 1
        err = capsys.readouterr().err
        assert "DegenerateColumnError" in err and "Pregnancies" in err


def test_repeat_byte_identical(tmp_path):
    cfg = write_config(tmp_path, train={"epochs": 2})
    for name in ("a", "b"):
        for cmd in ("preprocess", "train", "evaluate", "visualize"):
            assert main([cmd, "--config", str(cfg), "--output-dir", str(tmp_path / name)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_seed_flag_changes_split(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["preprocess", "--config", str(cfg), "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["preprocess", "--config", str(cfg), "--seed", "7", "--output-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "test.csv").read_bytes() != (tmp_path / "b" / "test.csv").read_bytes()


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
