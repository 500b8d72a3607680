import json

import numpy as np
import pytest

from dperm.cli import main
from dperm.dataset_io import save_dataset
from dperm.erm import TrainedModel
from dperm.experiments import load_results, synthetic_dataset


@pytest.fixture()
def data_file(tmp_path):
    path = tmp_path / "d.csv"
    save_dataset(synthetic_dataset(300, 4, 0), path)
    return path


def test_train_and_predict(tmp_path, data_file):
    model_path = tmp_path / "m.json"
    rc = main(["train", "--data", str(data_file), "--method", "objective", "--loss", "smoothed-hinge",
               "--lambda", "0.01", "--epsilon", "1.0", "--seed", "9", "--out", str(model_path)])
    assert rc == 0
    model = TrainedModel.load(model_path)
    assert model.method == "objective" and model.seed == 9 and model.loss.kind == "smoothed_hinge"
    out = tmp_path / "p.json"
    assert main(["predict", "--model", str(model_path), "--data", str(data_file), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["n"] == 300 and len(doc["labels"]) == 300
    assert main(["predict", "--model", str(model_path), "--x", "0.1,0.2,0.0,-0.1", "--out", str(out)]) == 0
    assert set(json.loads(out.read_text())) == {"score", "label"}


def test_train_is_deterministic(tmp_path, data_file):
    for name in ("a", "b"):
        main(["train", "--data", str(data_file), "--method", "output", "--lambda", "0.05", "--epsilon", "0.5",
              "--seed", "3", "--out", str(tmp_path / f"{name}.json")])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_kernel_train(tmp_path, data_file):
    out = tmp_path / "k.json"
    rc = main(["train", "--data", str(data_file), "--method", "output", "--lambda", "0.05", "--epsilon", "1",
               "--kernel-gamma", "2", "--features-D", "40", "--out", str(out)])
    assert rc == 0
    model = TrainedModel.load(out)
    assert model.feature_map.dimension_D == 40 and model.feature_map.norm_mode == "rescale_half"


def test_precondition_exit_code(tmp_path, data_file):
    assert main(["train", "--data", str(data_file), "--lambda", "-1", "--epsilon", "1"]) == 2
    assert main(["train", "--data", str(data_file), "--method", "output", "--lambda", "0.1"]) == 2
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--lambda", "0.1", "--epsilon", "1"]) == 2
    assert main(["train", "--bogus"]) == 2


def test_tune(tmp_path, data_file):
    out = tmp_path / "t.json"
    rc = main(["tune", "--data", str(data_file), "--lambda", "0.001", "0.01", "0.1", "--epsilon", "1",
               "--audit-scores", "--out", str(out)])
    assert rc == 0
    info = TrainedModel.load(out).extra["tuning"]
    assert info["candidates"] == [0.001, 0.01, 0.1] and len(info["mistakes"]) == 3


def test_audit_pass_and_json(tmp_path):
    out = tmp_path / "a.json"
    assert main(["audit", "det-identity", "noise-law", "--seed", "1", "--out", str(out)]) == 0
    reports = json.loads(out.read_text())
    assert [r["name"] for r in reports] == ["det-identity", "noise-law"]
    assert main(["audit", "unknown-test"]) == 2


def test_audit_failure_exit_code(monkeypatch):
    from dperm import audit

    def failing(names, seed, repeats):
        return [audit.AuditReport("fake", 1, 2.0, 1.0, False)]

    monkeypatch.setattr(audit, "run_audits", failing)
    assert main(["audit", "det-identity"]) == 3


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_experiment(tmp_path, fmt):
    out = tmp_path / f"r.{fmt}"
    args = ["experiment", "--data", "synthetic", "--n", "200", "--dim", "3", "--method", "nonprivate", "output",
            "--loss", "logistic", "huber", "--lambda", "0.01", "--epsilon", "0.5", "1", "--folds", "2",
            "--repeats", "2", "--seed", "5", "--out", str(out), "--format", fmt]
    assert main(args) == 0
    first = out.read_bytes()
    res = load_results(out)
    assert len(res.records) == 2 * 1 * 2 + 2 * 2 * 1 * 2 * 2
    assert main(args) == 0
    assert out.read_bytes() == first


def test_learning_curve_cli(tmp_path):
    out = tmp_path / "lc.csv"
    rc = main(["experiment", "--kind", "learning-curve", "--data", "synthetic", "--n", "600", "--dim", "3",
               "--method", "objective", "--lambda", "0.01", "0.1", "--epsilon", "1", "--repeats", "2",
               "--n-schedule", "50", "100", "--out", str(out)])
    assert rc == 0
    assert {r.n_train for r in load_results(out).records} == {50, 100}


def test_experiment_from_raw_table(tmp_path):
    schema = tmp_path / "s.json"
    schema.write_text(json.dumps({
        "columns": [{"name": "a", "kind": "numeric"}, {"name": "c", "kind": "categorical"},
                    {"name": "y", "kind": "categorical"}],
        "label": {"column": "y", "positive": "p"},
    }))
    rng = np.random.default_rng(0)
    rows = [f"{rng.normal():.4f},{'uv'[i % 2]},{'p' if rng.random() < 0.3 else 'n'}" for i in range(60)]
    table = tmp_path / "t.csv"
    table.write_text("\n".join(rows) + "\n")
    rc = main(["train", "--data", str(table), "--schema", str(schema), "--method", "nonprivate",
               "--lambda", "0.1", "--out", str(tmp_path / "m.json")])
    assert rc == 0
    assert TrainedModel.load(tmp_path / "m.json").weights.size == 3
