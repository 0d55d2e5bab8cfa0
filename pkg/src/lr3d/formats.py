"""Line-delimited JSON files for datasets, predictions and reports.

Every file starts with a header line (``"kind": "header"``) carrying the
schema version, the view name and, for datasets, the scene configuration.
Each following line is one record.
"""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from lr3d.exceptions import SchemaError
from lr3d.metrics import DetectionRecord, GroundTruthRecord
from lr3d.synthdata import SCHEMA_VERSION, AnnotationRecord, Dataset, SceneConfig

VIEWS = ("train", "eval", "merged", "predictions")

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_object_state = {
    "type": "object",
    "required": ["center", "size", "yaw", "class_id"],
    "properties": {"center": _vec3, "size": _vec3, "yaw": {"type": "number"}, "class_id": {"type": "integer"}},
    "additionalProperties": False,
}

HEADER_SCHEMA = {
    "type": "object",
    "required": ["kind", "schema_version", "view"],
    "properties": {
        "kind": {"const": "header"},
        "schema_version": {"type": "integer"},
        "view": {"enum": list(VIEWS)},
        "config": {"type": "object"},
    },
}

RECORD_SCHEMA = {
    "type": "object",
    "required": ["record_id", "frame_id", "class_id", "box2d", "feature", "distant", "provenance"],
    "properties": {
        "record_id": {"type": "string"},
        "frame_id": {"type": "integer", "minimum": 0},
        "class_id": {"type": "integer", "minimum": 0},
        "box2d": {
            "type": "object",
            "required": ["w2d", "h2d", "u", "v"],
            "properties": {
                "w2d": {"type": "number", "minimum": 0},
                "h2d": {"type": "number", "minimum": 0},
                "u": {"type": "number"},
                "v": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "feature": {"type": "array", "items": {"type": "number"}, "minItems": 5},
        "distant": {"type": "boolean"},
        "provenance": {"enum": ["gt", "pseudo"]},
        "box3d": _object_state,
        "gt_private": _object_state,
        "teacher_depth": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
    "allOf": [
        # training views never expose 3D for distant ground-truth records
        {"if": {"properties": {"distant": {"const": True}, "provenance": {"const": "gt"}}},
         "then": {"not": {"required": ["box3d"]}}},
        {"if": {"properties": {"provenance": {"const": "pseudo"}}},
         "then": {"required": ["box3d", "teacher_depth"]}},
    ],
}

PREDICTION_SCHEMA = {
    "type": "object",
    "required": ["frame_id", "class_id", "center", "size", "yaw", "score"],
    "properties": {
        "det_id": {"type": "string"},
        "frame_id": {"type": "integer"},
        "class_id": {"type": "integer"},
        "center": _vec3,
        "size": _vec3,
        "yaw": {"type": "number"},
        "score": {"type": "number"},
    },
}


_VALIDATORS = {}


def _validator(schema):
    key = id(schema)
    if key not in _VALIDATORS:
        cls = jsonschema.validators.validator_for(schema)
        cls.check_schema(schema)
        _VALIDATORS[key] = cls(schema)
    return _VALIDATORS[key]


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_lines(path, header: dict, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(dict(header, kind="header")) + "\n")
        for row in rows:
            fh.write(_dumps(row) + "\n")


def read_lines(path):
    """Returns (header, rows)."""
    header, rows = None, []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
            if obj.get("kind") == "header":
                header = obj
            else:
                rows.append(obj)
    if header is None:
        raise SchemaError(f"{path}: missing header line")
    return header, rows


def _record_row(rec: AnnotationRecord, view: str) -> dict:
    return rec.eval_dict() if view == "eval" else rec.train_dict()


def write_dataset(path, dataset: Dataset, view: str) -> None:
    if view not in ("train", "eval", "merged"):
        raise ValueError(f"unknown dataset view {view!r}")
    header = {"schema_version": SCHEMA_VERSION, "view": view, "config": dataset.config.to_dict()}
    write_lines(path, header, (_record_row(r, view) for r in dataset.records))


def write_views(out_dir, dataset: Dataset) -> dict:
    """Write train.jsonl and eval.jsonl into ``out_dir``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.jsonl", "eval": out / "eval.jsonl"}
    for view, p in paths.items():
        write_dataset(p, dataset, view)
    return paths


def validate_rows(header: dict, rows) -> None:
    try:
        _validator(HEADER_SCHEMA).validate(header)
        schema = PREDICTION_SCHEMA if header["view"] == "predictions" else RECORD_SCHEMA
        ids = set()
        check = _validator(schema)
        for row in rows:
            check.validate(row)
            key = row.get("record_id", row.get("det_id"))
            if key is not None and key != "":
                if key in ids:
                    raise SchemaError(f"duplicate record id {key!r}")
                ids.add(key)
            if header["view"] == "eval" and "gt_private" not in row:
                raise SchemaError(f"eval record {key!r} lacks gt_private")
            if header["view"] != "eval" and "gt_private" in row:
                raise SchemaError(f"record {key!r} leaks gt_private outside the eval view")
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"schema violation at {loc}: {exc.message}") from None
    if header["schema_version"] > SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {header['schema_version']}")


def validate_file(path) -> dict:
    header, rows = read_lines(path)
    validate_rows(header, rows)
    return header


def read_dataset(path, validate: bool = True) -> tuple[Dataset, str]:
    header, rows = read_lines(path)
    if validate:
        validate_rows(header, rows)
    records = [AnnotationRecord.from_dict(row) for row in rows]
    return Dataset(SceneConfig.from_dict(header["config"]), records), header["view"]


def write_predictions(path, preds) -> None:
    write_lines(path, {"schema_version": SCHEMA_VERSION, "view": "predictions"}, (p.to_dict() for p in preds))


def read_predictions(path) -> list[DetectionRecord]:
    header, rows = read_lines(path)
    validate_rows(header, rows)
    return [DetectionRecord.from_dict(r) for r in rows]


def ground_truth_from_eval(dataset: Dataset) -> list[GroundTruthRecord]:
    out = []
    for r in dataset.records:
        g = r.gt_private
        if g is None:
            raise SchemaError(f"record {r.record_id} has no private ground truth")
        out.append(GroundTruthRecord(r.frame_id, r.class_id, g.center, g.size, g.yaw, r.record_id))
    return out


def write_report(path, reports, extra: dict | None = None) -> None:
    doc = {"reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
