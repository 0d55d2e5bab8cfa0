import json

import numpy as np
import pytest

from lr3d import formats, iphead
from lr3d.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, main
from lr3d.experiment import ExperimentConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scene.json").write_text(json.dumps({"seed": 2, "n_frames": 25}))
    (d / "train.json").write_text(json.dumps({"train": {"epochs": 40}}))
    assert main(["generate", "--config", str(d / "scene.json"), "--out", str(d / "data")]) == EXIT_OK
    return d


def _train(d, out, *extra):
    return main(["train", "--dataset", str(d / "data/train.jsonl"), "--config", str(d / "train.json"),
                 "--out", str(out), *extra])


def test_generate_idempotent(workdir, tmp_path):
    assert main(["generate", "--config", str(workdir / "scene.json"), "--out", str(tmp_path)]) == EXIT_OK
    for view in ("train", "eval"):
        assert (tmp_path / f"{view}.jsonl").read_bytes() == (workdir / f"data/{view}.jsonl").read_bytes()
        assert formats.validate_file(tmp_path / f"{view}.jsonl")["view"] == view


def test_generate_seed_override(workdir, tmp_path):
    assert main(["generate", "--config", str(workdir / "scene.json"), "--seed", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "train.jsonl").read_bytes() != (workdir / "data/train.jsonl").read_bytes()


@pytest.mark.parametrize("doc, field", [({"n_frames": "x"}, "n_frames"), ({"depth_rnage": [1, 2]}, "depth_rnage")])
def test_malformed_config(tmp_path, capsys, doc, field):
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert main(["generate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_invalid_json_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["generate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_train_config_field_named(workdir, tmp_path, capsys):
    (tmp_path / "t.json").write_text(json.dumps({"train": {"lr": -1}}))
    rc = main(["train", "--dataset", str(workdir / "data/train.jsonl"), "--config", str(tmp_path / "t.json"),
               "--out", str(tmp_path / "m.npz")])
    assert rc == EXIT_CONFIG and "train.lr" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["predict", "--model", str(tmp_path / "nope.npz"), "--dataset", "x", "--out", "y"]) == EXIT_IO


def test_divergence_exit_code(workdir, tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"train": {"epochs": 5, "lr": 1e300}}))
    rc = main(["train", "--dataset", str(workdir / "data/train.jsonl"), "--config", str(tmp_path / "t.json"),
               "--out", str(tmp_path / "m.npz")])
    assert rc == EXIT_DIVERGED


def test_train_predict_eval_teach_curves(workdir, tmp_path, capsys):
    d = workdir
    model = tmp_path / "m.npz"
    assert _train(d, model, "--heldout", str(d / "data/eval.jsonl")) == EXIT_OK
    report = json.loads(model.with_suffix(".report.json").read_text())
    assert len(report["epoch_loss"]) == 40 and report["heldout_epochs"] == [40]

    preds = tmp_path / "p.jsonl"
    assert main(["predict", "--model", str(model), "--dataset", str(d / "data/train.jsonl"),
                 "--out", str(preds)]) == EXIT_OK
    rep = tmp_path / "r.json"
    assert main(["eval", "--predictions", str(preds), "--gt", str(d / "data/eval.jsonl"),
                 "--preset", "nuscenes", "--out", str(rep)]) == EXIT_OK
    buckets = [r["bucket"] for r in json.loads(rep.read_text())["reports"]]
    assert buckets == ["close", "distant_40_51.2", "distant_51.2_inf", "overall"]

    merged = tmp_path / "merged.jsonl"
    assert main(["teach", "--model", str(model), "--dataset", str(d / "data/train.jsonl"),
                 "--out", str(merged)]) == EXIT_OK
    assert formats.validate_file(merged)["view"] == "merged"

    curve = tmp_path / "c.tsv"
    assert main(["curves", "--model", str(model), "--size", "3.9,1.6,1.5", "--depths", "10,100,12",
                 "--out", str(curve)]) == EXIT_OK
    rows = np.loadtxt(curve, skiprows=1)
    assert rows.shape == (12, 4) and rows[0, 3] == pytest.approx(10.0) and rows[-1, 3] == pytest.approx(100.0)
    assert np.all(np.diff(rows[:, 1]) < 0)


def test_eval_requires_eval_view(workdir, tmp_path):
    d = workdir
    preds = tmp_path / "p.jsonl"
    formats.write_predictions(preds, [])
    assert main(["eval", "--predictions", str(preds), "--gt", str(d / "data/train.jsonl")]) == EXIT_IO


def test_eval_perfect_fixture(workdir, tmp_path, capsys):
    ds, _ = formats.read_dataset(workdir / "data/eval.jsonl")
    from lr3d.metrics import DetectionRecord

    perfect = [DetectionRecord(g.frame_id, g.class_id, g.center, g.size, g.yaw, 1.0, g.gt_id)
               for g in formats.ground_truth_from_eval(ds)]
    formats.write_predictions(tmp_path / "p.jsonl", perfect)
    for flags in (["--buckets", "0,40,inf"], ["--preset", "nuscenes"]):
        rep = tmp_path / "r.json"
        assert main(["eval", "--predictions", str(tmp_path / "p.jsonl"), "--gt", str(workdir / "data/eval.jsonl"),
                     "--out", str(rep), *flags]) == EXIT_OK
        for r in json.loads(rep.read_text())["reports"]:
            assert r["defined"] and r["lds"] == 1.0


def test_bad_buckets(workdir, tmp_path, capsys):
    preds = tmp_path / "p.jsonl"
    formats.write_predictions(preds, [])
    rc = main(["eval", "--predictions", str(preds), "--gt", str(workdir / "data/eval.jsonl"), "--buckets", "0,50,40"])
    assert rc == EXIT_CONFIG and "buckets" in capsys.readouterr().err


def test_ablation_flags(workdir, tmp_path):
    shared, noaug = tmp_path / "s.npz", tmp_path / "n.npz"
    assert _train(workdir, shared, "--weight-mode", "shared") == EXIT_OK
    assert _train(workdir, noaug, "--no-aug") == EXIT_OK
    assert iphead.IPHeadModel.load(shared).weight_mode == "shared"
    r = json.loads(noaug.with_suffix(".report.json").read_text())
    assert r["samples_per_epoch"] == r["n_objects"]


def test_run_writes_artifacts(tmp_path):
    cfg = {"scene": {"n_frames": 20}, "train": {"epochs": 30}, "seed": 4}
    (tmp_path / "exp.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "exp.json"), "--out", str(tmp_path / "out")]) == EXIT_OK
    out = tmp_path / "out"
    for name in ("config.json", "train.jsonl", "eval.jsonl", "model.npz", "predictions.jsonl", "merged.jsonl",
                 "summary.json", "report.txt"):
        assert (out / name).exists(), name
    stored = json.loads((out / "config.json").read_text())
    assert stored["seed"] == 4 and stored["scene"]["seed"] == 4 and stored["train"]["seed"] == 4
    assert ExperimentConfig.from_dict(stored).resolved().to_dict() == stored


@pytest.mark.parametrize("doc, field", [({"scene": {"n_frames": 0}}, "scene.n_frames"),
                                        ({"model": {"weight_mode": "x"}}, "model.weight_mode"),
                                        ({"buckets": [0, 40, 30]}, "buckets"),
                                        ({"sed": 1}, "sed")])
def test_run_config_errors(tmp_path, capsys, doc, field):
    (tmp_path / "exp.json").write_text(json.dumps(doc))
    assert main(["run", "--config", str(tmp_path / "exp.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert field in capsys.readouterr().err
