"""Command-line entry point: ``lr3d {generate,train,predict,eval,teach,curves,run}``.

Exit codes: 0 success, 2 invalid configuration, 3 I/O or file-format error,
4 numerical divergence during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from lr3d import experiment, formats, iphead, metrics
from lr3d.exceptions import ConfigInvalid, DivergedLoss, EmptyTrainingSet, SchemaError
from lr3d.geometry import ObjectState, synthesize_pair
from lr3d.synthdata import SceneConfig, generate
from lr3d.teacher import merge, pseudo_label

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("lr3d")


def _floats(text: str, n: int | None = None) -> list[float]:
    vals = [float(x) for x in text.split(",")]
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def cmd_generate(args) -> int:
    cfg = SceneConfig.from_dict(experiment.load_json(args.config)) if args.config else SceneConfig()
    if args.seed is not None:
        cfg = SceneConfig.from_dict(dict(cfg.to_dict(), seed=args.seed))
    paths = formats.write_views(args.out, generate(cfg))
    for view, p in paths.items():
        print(f"{view}: {p}")
    return EXIT_OK


def _load_train_configs(path):
    model_cfg, train_cfg = experiment.ModelConfig(), iphead.TrainConfig()
    if path:
        doc = experiment.load_json(path)
        unknown = set(doc) - {"model", "train"}
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown section (expected 'model' and/or 'train')")
        if "model" in doc:
            model_cfg = experiment.dataclass_from_dict(experiment.ModelConfig, doc["model"], "model")
        if "train" in doc:
            train_cfg = experiment.dataclass_from_dict(iphead.TrainConfig, doc["train"], "train")
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    import dataclasses

    model_cfg, train_cfg = _load_train_configs(args.config)
    if args.weight_mode:
        model_cfg = dataclasses.replace(model_cfg, weight_mode=args.weight_mode)
    if args.no_aug:
        train_cfg = dataclasses.replace(train_cfg, aug_samples=0)
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    dataset, _ = formats.read_dataset(args.dataset)
    heldout = None
    if args.heldout:
        heldout = formats.read_dataset(args.heldout)[0].records
    model, report = experiment.train_on_records(dataset.records, dataset.config.camera, model_cfg,
                                                train_cfg, heldout_records=heldout)
    model.save(args.out)
    report_path = Path(args.report) if args.report else Path(args.out).with_suffix(".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    msg = f"model: {args.out}  final loss: {report.epoch_loss[-1]:.6g}"
    if report.heldout_median_rel_err:
        msg += f"  held-out median rel. depth err: {report.heldout_median_rel_err[-1]:.4f}"
    print(msg)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = iphead.IPHeadModel.load(args.model)
    dataset, _ = formats.read_dataset(args.dataset)
    preds = experiment.predict_records(model, dataset.config.camera, dataset.records)
    formats.write_predictions(args.out, preds)
    print(f"{len(preds)} predictions: {args.out}")
    return EXIT_OK


def _buckets(args):
    if args.preset == "kitti":
        return metrics.KITTI_BUCKETS
    if args.preset == "nuscenes":
        return metrics.NUSCENES_BUCKETS
    try:
        return metrics.parse_buckets(args.buckets.split(","))
    except ValueError as exc:
        raise ConfigInvalid("buckets", str(exc)) from None


def cmd_eval(args) -> int:
    preds = formats.read_predictions(args.predictions)
    gt_ds, view = formats.read_dataset(args.gt)
    if view != "eval":
        raise SchemaError(f"{args.gt}: ground truth must be an eval view, got {view!r}")
    reports = metrics.bucketed_report(preds, formats.ground_truth_from_eval(gt_ds), _buckets(args))
    print(metrics.format_reports(reports))
    if args.out:
        formats.write_report(args.out, reports)
    return EXIT_OK


def cmd_teach(args) -> int:
    model = iphead.IPHeadModel.load(args.model)
    dataset, _ = formats.read_dataset(args.dataset)
    pseudo = pseudo_label(model, dataset.config.camera, dataset.distant)
    merged = merge(dataset.close, pseudo, dataset.config)
    formats.write_dataset(args.out, merged, "merged")
    formats.validate_file(args.out)
    print(f"{len(dataset.close)} close + {len(pseudo)} pseudo records: {args.out}")
    return EXIT_OK


def cmd_curves(args) -> int:
    model = iphead.IPHeadModel.load(args.model)
    camera = SceneConfig().camera
    if args.dataset:
        camera = formats.read_dataset(args.dataset, validate=False)[0].config.camera
    size = _floats(args.size, 3)
    n_classes = model.feature_dim - iphead.N_GEOM_FEATURES
    if not 0 <= args.class_id < n_classes:
        raise ConfigInvalid("class-id", f"must be in [0, {n_classes})")
    feature = iphead.make_feature(size, args.orientation, args.class_id, n_classes)
    start, stop, num = _floats(args.depths, 3)
    # object on the optical axis; relative orientation equals yaw there
    obj = ObjectState((0.0, 0.0, start), size, args.orientation, args.class_id)
    sweep = [synthesize_pair(camera, obj, d)[0] for d in np.geomspace(start, stop, int(num))]
    rows = iphead.dump_mapping_curve(model, feature, sweep, camera, obj)
    lines = ["w2d\th2d\tpred_depth\tgt_depth"] + [f"{w:.6f}\t{h:.6f}\t{p:.6f}\t{g:.6f}" for w, h, p, g in rows]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"{len(rows)} rows: {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = experiment.ExperimentConfig.from_dict(experiment.load_json(args.config)) if args.config \
        else experiment.ExperimentConfig()
    summary = experiment.run_experiment(cfg, args.out)
    reports = [metrics.LDSReport.from_dict(r) for r in summary["reports"]]
    print(metrics.format_reports(reports))
    print(json.dumps(summary["depth_error"], sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lr3d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset (train and eval views)")
    g.add_argument("--config", help="scene config JSON (defaults used when omitted)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an IP-Head on the close records of a training view")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config", help="JSON with optional 'model' and 'train' sections")
    t.add_argument("--weight-mode", choices=["dynamic", "shared"])
    t.add_argument("--no-aug", action="store_true", help="disable projection augmentation")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--heldout", help="eval view scored during training")
    t.add_argument("--out", required=True, help="model file")
    t.add_argument("--report", help="training report JSON (default: <out>.report.json)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="3D detections from 2D boxes with a trained model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="LDS reports per range bucket")
    e.add_argument("--predictions", required=True)
    e.add_argument("--gt", required=True, help="eval view")
    e.add_argument("--buckets", default="0,40,inf", help="ascending bucket edges (default 0,40,inf)")
    e.add_argument("--preset", choices=["kitti", "nuscenes"], help="0-40/40-inf or 0-40/40-51.2/51.2-inf")
    e.add_argument("--out", help="machine-readable report JSON")
    e.set_defaults(func=cmd_eval)

    te = sub.add_parser("teach", help="pseudo-label distant records and merge with close ground truth")
    te.add_argument("--model", required=True)
    te.add_argument("--dataset", required=True, help="training view")
    te.add_argument("--out", required=True)
    te.set_defaults(func=cmd_teach)

    c = sub.add_parser("curves", help="predicted vs geometric box-size/depth mapping")
    c.add_argument("--model", required=True)
    c.add_argument("--size", required=True, help="l,w,h in meters")
    c.add_argument("--orientation", type=float, default=0.0, help="relative orientation (rad)")
    c.add_argument("--class-id", type=int, default=0)
    c.add_argument("--depths", default="10,120,50", help="start,stop,count (geometric spacing)")
    c.add_argument("--dataset", help="take camera intrinsics from this dataset header")
    c.add_argument("--out", required=True, help="tab-separated output")
    c.set_defaults(func=cmd_curves)

    r = sub.add_parser("run", help="generate + train + evaluate from one experiment config")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"lr3d: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedLoss as exc:
        print(f"lr3d: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, SchemaError, EmptyTrainingSet, KeyError) as exc:
        print(f"lr3d: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
