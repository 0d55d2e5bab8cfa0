"""Long-range teacher: turn distant 2D-only annotations into pseudo 3D labels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lr3d.exceptions import DuplicateId, MissingFeature
from lr3d.geometry import Box2D, CameraIntrinsics, ObjectState, back_project, wrap_angle
from lr3d.iphead import N_GEOM_FEATURES, IPHeadModel, InstanceFeature, predict_depths
from lr3d.synthdata import AnnotationRecord, Dataset, SceneConfig


@dataclass(frozen=True)
class PseudoLabel:
    record_id: str
    frame_id: int
    class_id: int
    center: tuple
    size: tuple
    yaw: float
    teacher_depth: float
    box2d: Box2D
    feature: InstanceFeature
    provenance: str = "pseudo"

    def as_object(self) -> ObjectState:
        return ObjectState(self.center, self.size, self.yaw, self.class_id)


def pseudo_label(model: IPHeadModel, K: CameraIntrinsics, records) -> list[PseudoLabel]:
    """Predict depth for each record and place a 3D box on the ray through its 2D box center.

    Size and relative orientation come from the record's feature; global yaw
    is recovered as ``o + atan2(x, z)`` of the reconstructed center. Output is
    ordered by record id.
    """
    records = sorted(records, key=lambda r: r.record_id)
    for r in records:
        if r.feature is None or r.feature.dim < N_GEOM_FEATURES:
            raise MissingFeature(f"record {r.record_id} has no usable instance feature")
    if not records:
        return []
    F = np.array([r.feature.vec for r in records])
    wh = np.array([[r.box2d.w2d, r.box2d.h2d] for r in records])
    depths = predict_depths(model, F, wh)
    out = []
    for r, d in zip(records, depths):
        center = back_project(K, r.box2d.u, r.box2d.v, float(d))
        yaw = wrap_angle(r.feature.orientation + math.atan2(center[0], center[2]))
        out.append(PseudoLabel(r.record_id, r.frame_id, r.class_id, center, r.feature.size, yaw,
                               float(d), r.box2d, r.feature))
    return out


def merge(close_gt, pseudo, config=None) -> Dataset:
    """Close ground truth plus pseudo-labelled distant records as one training set, ordered by id."""
    seen = set()
    merged = []
    for r in close_gt:
        if r.record_id in seen:
            raise DuplicateId(f"duplicate record id {r.record_id!r}")
        seen.add(r.record_id)
        merged.append(AnnotationRecord(r.record_id, r.frame_id, r.class_id, r.box2d, r.feature,
                                       r.distant, r.box3d, provenance=r.provenance,
                                       teacher_depth=r.teacher_depth))
    for p in pseudo:
        if p.record_id in seen:
            raise DuplicateId(f"duplicate record id {p.record_id!r}")
        seen.add(p.record_id)
        merged.append(AnnotationRecord(p.record_id, p.frame_id, p.class_id, p.box2d, p.feature,
                                       True, p.as_object(), provenance=p.provenance,
                                       teacher_depth=p.teacher_depth))
    merged.sort(key=lambda r: r.record_id)
    return Dataset(config if config is not None else SceneConfig(), merged)
