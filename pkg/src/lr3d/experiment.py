"""Experiment orchestration: generate -> split -> train -> predict -> evaluate."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lr3d import formats, iphead, metrics
from lr3d.exceptions import ConfigInvalid, EmptyTrainingSet
from lr3d.geometry import CameraIntrinsics
from lr3d.metrics import DetectionRecord
from lr3d.synthdata import SceneConfig, generate, split, training_arrays
from lr3d.teacher import merge, pseudo_label


@dataclass(frozen=True)
class ModelConfig:
    num_freqs: int = 8
    input_scale: float = 1000.0
    hidden: int = 16
    hyper_hidden: int = 64
    weight_mode: str = "dynamic"

    def __post_init__(self):
        if self.weight_mode not in ("dynamic", "shared"):
            raise ConfigInvalid("weight_mode", "must be 'dynamic' or 'shared'")
        for name in ("num_freqs", "hidden", "hyper_hidden"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigInvalid(name, "must be a positive integer")
        if not (isinstance(self.input_scale, (int, float)) and self.input_scale > 0):
            raise ConfigInvalid("input_scale", "must be positive")


def dataclass_from_dict(cls, d: dict, section: str):
    """Build a config dataclass, naming the offending ``section.field`` on failure."""
    if not isinstance(d, dict):
        raise ConfigInvalid(section, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in d:
        if key not in names:
            raise ConfigInvalid(f"{section}.{key}", "unknown field")
    try:
        return cls(**d)
    except ConfigInvalid as exc:
        raise ConfigInvalid(f"{section}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigInvalid(section, str(exc)) from None


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: iphead.TrainConfig = field(default_factory=iphead.TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    buckets: tuple = (0.0, 40.0, math.inf)
    split: tuple = (0.7, 0.3)
    seed: int = 0

    def resolved(self) -> "ExperimentConfig":
        """Copy with the single experiment seed pushed into every random stage."""
        return dataclasses.replace(
            self,
            scene=dataclasses.replace(self.scene, seed=self.seed),
            train=dataclasses.replace(self.train, seed=self.seed),
        )

    def to_dict(self) -> dict:
        return {
            "scene": self.scene.to_dict(),
            "train": dataclasses.asdict(self.train),
            "model": dataclasses.asdict(self.model),
            "buckets": ["inf" if math.isinf(b) else b for b in self.buckets],
            "split": list(self.split),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"scene", "train", "model", "buckets", "split", "seed"}
        for key in d:
            if key not in known:
                raise ConfigInvalid(key, "unknown field")
        kw = {}
        if "scene" in d:
            try:
                kw["scene"] = SceneConfig.from_dict(d["scene"])
            except ConfigInvalid as exc:
                raise ConfigInvalid(f"scene.{exc.field}", str(exc).split(": ", 1)[-1]) from None
        if "train" in d:
            kw["train"] = dataclass_from_dict(iphead.TrainConfig, d["train"], "train")
        if "model" in d:
            kw["model"] = dataclass_from_dict(ModelConfig, d["model"], "model")
        if "buckets" in d:
            try:
                edges = tuple(float(b) for b in d["buckets"])
                metrics.parse_buckets(edges)
            except (TypeError, ValueError) as exc:
                raise ConfigInvalid("buckets", str(exc)) from None
            kw["buckets"] = edges
        if "split" in d:
            kw["split"] = tuple(d["split"])
        if "seed" in d:
            if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
                raise ConfigInvalid("seed", "expected a non-negative integer")
            kw["seed"] = d["seed"]
        return cls(**kw)


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(str(path), f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def new_model(feature_dim: int, model_cfg: ModelConfig, seed: int) -> iphead.IPHeadModel:
    return iphead.IPHeadModel(
        feature_dim,
        iphead.PositionalEncodingConfig(model_cfg.num_freqs, model_cfg.input_scale),
        hidden=model_cfg.hidden,
        hyper_hidden=model_cfg.hyper_hidden,
        weight_mode=model_cfg.weight_mode,
        rng_seed=seed,
    )


def heldout_arrays(records):
    """(F, wh, depth) using private ground truth depth."""
    recs = [r for r in records if r.gt_private is not None]
    return (np.array([r.feature.vec for r in recs]).reshape(len(recs), -1),
            np.array([[r.box2d.w2d, r.box2d.h2d] for r in recs]).reshape(len(recs), 2),
            np.array([r.gt_private.depth() for r in recs]))


def train_on_records(records, camera: CameraIntrinsics, model_cfg: ModelConfig, train_cfg: iphead.TrainConfig,
                     heldout_records=None):
    """Train an IP-Head on every record that carries a 3D label."""
    F, wh, depth, objects = training_arrays(records)
    if len(F) == 0:
        raise EmptyTrainingSet("dataset has no records with 3D labels")
    model = new_model(F.shape[1], model_cfg, train_cfg.seed)
    heldout = heldout_arrays(heldout_records) if heldout_records else None
    return iphead.train(model, (F, wh, depth), camera, objects if train_cfg.aug_samples else None,
                        train_cfg, heldout=heldout)


def predict_records(model: iphead.IPHeadModel, camera: CameraIntrinsics, records, score: float = 1.0):
    """3D detections for every record, using its 2D box as the proposal."""
    return [DetectionRecord(p.frame_id, p.class_id, p.center, p.size, p.yaw, score, p.record_id)
            for p in pseudo_label(model, camera, records)]


def median_rel_depth_error(model, records) -> float | None:
    F, wh, d = heldout_arrays(records)
    if len(d) == 0:
        return None
    return float(np.median(np.abs(iphead.predict_depths(model, F, wh) - d) / d))


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Full pipeline. Returns a JSON-ready summary; writes artifacts when ``out_dir`` is given."""
    cfg = config.resolved()
    dataset = generate(cfg.scene)
    train_ds, val_ds = split(dataset, cfg.split, seed=cfg.seed)
    camera = cfg.scene.camera
    model, report = train_on_records(train_ds.records, camera, cfg.model, cfg.train)

    preds = predict_records(model, camera, val_ds.records)
    gts = formats.ground_truth_from_eval(val_ds)
    buckets = metrics.parse_buckets(cfg.buckets)
    reports = metrics.bucketed_report(preds, gts, buckets)

    pseudo = pseudo_label(model, camera, train_ds.distant)
    teacher_err = [metrics.rel_dist_err(p.center, r.gt_private.center, r.gt_private.distance())
                   for p, r in zip(pseudo, sorted(train_ds.distant, key=lambda r: r.record_id))]
    summary = {
        "config": cfg.to_dict(),
        "reports": [r.to_dict() for r in reports],
        "depth_error": {
            "val_close_median_rel": median_rel_depth_error(model, val_ds.close),
            "val_distant_median_rel": median_rel_depth_error(model, val_ds.distant),
            "train_distant_median_rel": median_rel_depth_error(model, train_ds.distant),
        },
        "teacher_median_rel_dist_err": float(np.median(teacher_err)) if teacher_err else None,
        "final_train_loss": report.epoch_loss[-1],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        formats.write_dataset(out / "train.jsonl", train_ds, "train")
        formats.write_dataset(out / "eval.jsonl", val_ds, "eval")
        model.save(out / "model.npz")
        formats.write_predictions(out / "predictions.jsonl", preds)
        formats.write_dataset(out / "merged.jsonl", merge(train_ds.close, pseudo, cfg.scene), "merged")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(metrics.format_reports(reports) + "\n")
    return summary
