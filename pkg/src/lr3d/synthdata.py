"""Synthetic driving scenes with the long-range supervision regime.

Close objects carry 2D and 3D labels; objects farther than ``distant_threshold``
(Euclidean distance from the camera) carry only their 2D box and instance
feature in the training view. Full ground truth lives in the evaluation view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lr3d.exceptions import BadFractions, ConfigInvalid
from lr3d.geometry import Box2D, CameraIntrinsics, ObjectState, project_boxes, relative_orientation, wrap_angle
from lr3d.iphead import InstanceFeature, make_feature

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ClassPrior:
    name: str
    size_mean: tuple[float, float, float]
    size_std: tuple[float, float, float]


DEFAULT_CLASSES = (
    ClassPrior("car", (3.9, 1.6, 1.5), (0.2, 0.08, 0.08)),
    ClassPrior("van", (5.2, 2.0, 2.2), (0.25, 0.1, 0.1)),
    ClassPrior("truck", (9.5, 2.5, 3.4), (0.5, 0.1, 0.15)),
)

DEFAULT_CAMERA = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=960.0, cy=540.0, img_w=1920.0, img_h=1080.0)


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_frames: int = 300
    objects_per_frame: tuple[int, int] = (3, 8)
    classes: tuple[ClassPrior, ...] = DEFAULT_CLASSES
    depth_range: tuple[float, float] = (5.0, 120.0)
    depth_shape: str = "loguniform"
    camera_height: float = 1.65
    u_margin: float = 0.05
    yaw_range: tuple[float, float] = (-math.pi, math.pi)
    distant_threshold: float = 40.0
    box_noise_std: float = 0.0
    feature_noise_std: float = 0.0
    camera: CameraIntrinsics = DEFAULT_CAMERA

    def validate(self) -> "SceneConfig":
        if self.n_frames < 1:
            raise ConfigInvalid("n_frames", "must be >= 1")
        lo, hi = self.objects_per_frame
        if not (0 <= lo <= hi):
            raise ConfigInvalid("objects_per_frame", "need 0 <= min <= max")
        if not self.classes:
            raise ConfigInvalid("classes", "class table is empty")
        for c in self.classes:
            if min(c.size_mean) <= 0 or min(c.size_std) < 0:
                raise ConfigInvalid("classes", f"class {c.name!r} needs positive size priors")
        d0, d1 = self.depth_range
        if not (0 < d0 < d1):
            raise ConfigInvalid("depth_range", "need 0 < min < max")
        if self.depth_shape not in ("loguniform", "uniform"):
            raise ConfigInvalid("depth_shape", "must be 'loguniform' or 'uniform'")
        if not self.distant_threshold > 0:
            raise ConfigInvalid("distant_threshold", "must be positive")
        if self.box_noise_std < 0 or self.feature_noise_std < 0:
            raise ConfigInvalid("box_noise_std" if self.box_noise_std < 0 else "feature_noise_std",
                                "must be >= 0")
        if not 0 <= self.u_margin < 0.5:
            raise ConfigInvalid("u_margin", "must be in [0, 0.5)")
        return self

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_frames": self.n_frames,
            "objects_per_frame": list(self.objects_per_frame),
            "classes": [{"name": c.name, "size_mean": list(c.size_mean), "size_std": list(c.size_std)}
                        for c in self.classes],
            "depth_range": list(self.depth_range),
            "depth_shape": self.depth_shape,
            "camera_height": self.camera_height,
            "u_margin": self.u_margin,
            "yaw_range": list(self.yaw_range),
            "distant_threshold": self.distant_threshold,
            "box_noise_std": self.box_noise_std,
            "feature_noise_std": self.feature_noise_std,
            "camera": self.camera.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = set(cls().to_dict())
        for key in d:
            if key not in known:
                raise ConfigInvalid(key, "unknown field")
        kw = dict(d)
        try:
            if "classes" in kw:
                kw["classes"] = tuple(ClassPrior(c["name"], tuple(map(float, c["size_mean"])),
                                                 tuple(map(float, c["size_std"]))) for c in kw["classes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid("classes", f"malformed class entry ({exc})") from None
        try:
            if "camera" in kw:
                kw["camera"] = CameraIntrinsics.from_dict(kw["camera"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid("camera", f"invalid intrinsics ({exc})") from None
        for key in ("objects_per_frame", "depth_range", "yaw_range"):
            if key in kw:
                try:
                    kw[key] = tuple(kw[key])
                    if len(kw[key]) != 2:
                        raise ValueError
                except (TypeError, ValueError):
                    raise ConfigInvalid(key, "expected a 2-element list") from None
        for key in ("seed", "n_frames"):
            if key in kw and (not isinstance(kw[key], int) or isinstance(kw[key], bool)):
                raise ConfigInvalid(key, "expected an integer")
        for key in ("camera_height", "u_margin", "distant_threshold", "box_noise_std", "feature_noise_std"):
            if key in kw and not isinstance(kw[key], (int, float)):
                raise ConfigInvalid(key, "expected a number")
        return cls(**kw).validate()


@dataclass
class AnnotationRecord:
    record_id: str
    frame_id: int
    class_id: int
    box2d: Box2D
    feature: InstanceFeature
    distant: bool
    box3d: ObjectState | None
    gt_private: ObjectState | None = None
    provenance: str = "gt"
    teacher_depth: float | None = None

    def train_dict(self) -> dict:
        """Training-view record: no 3D for distant objects, no private ground truth."""
        d = {
            "record_id": self.record_id,
            "frame_id": self.frame_id,
            "class_id": self.class_id,
            "box2d": self.box2d.to_dict(),
            "feature": [float(x) for x in self.feature.vec],
            "distant": self.distant,
            "provenance": self.provenance,
        }
        if self.box3d is not None and (not self.distant or self.provenance == "pseudo"):
            d["box3d"] = self.box3d.to_dict()
        if self.teacher_depth is not None:
            d["teacher_depth"] = float(self.teacher_depth)
        return d

    def eval_dict(self) -> dict:
        d = self.train_dict()
        d["gt_private"] = self.gt_private.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            record_id=d["record_id"],
            frame_id=int(d["frame_id"]),
            class_id=int(d["class_id"]),
            box2d=Box2D.from_dict(d["box2d"]),
            feature=InstanceFeature(np.asarray(d["feature"], dtype=float)),
            distant=bool(d["distant"]),
            box3d=ObjectState.from_dict(d["box3d"]) if "box3d" in d else None,
            gt_private=ObjectState.from_dict(d["gt_private"]) if "gt_private" in d else None,
            provenance=d.get("provenance", "gt"),
            teacher_depth=d.get("teacher_depth"),
        )


@dataclass
class Dataset:
    config: SceneConfig
    records: list = field(default_factory=list)

    @property
    def frames(self) -> list[int]:
        return sorted({r.frame_id for r in self.records})

    @property
    def close(self) -> list:
        return [r for r in self.records if not r.distant]

    @property
    def distant(self) -> list:
        return [r for r in self.records if r.distant]


def _frame_rng(seed: int, frame_id: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, frame_id, stream]))


def _sample_frame(config: SceneConfig, frame_id: int) -> list:
    rng = _frame_rng(config.seed, frame_id)
    # separate stream so enabling noise never changes the sampled scene
    noise_rng = _frame_rng(config.seed, frame_id, 1)
    K = config.camera
    n_cls = len(config.classes)
    lo, hi = config.objects_per_frame
    n = int(rng.integers(lo, hi + 1))
    d0, d1 = config.depth_range
    records = []
    for k in range(n):
        class_id = int(rng.integers(n_cls))
        prior = config.classes[class_id]
        size = np.maximum(rng.normal(prior.size_mean, prior.size_std), 0.1 * np.asarray(prior.size_mean))
        if config.depth_shape == "loguniform":
            z = math.exp(rng.uniform(math.log(d0), math.log(d1)))
        else:
            z = rng.uniform(d0, d1)
        # keep every corner well in front of the camera
        z = max(z, 0.5 * math.hypot(size[0], size[1]) + 0.5)
        margin = config.u_margin * K.img_w
        u = rng.uniform(margin, K.img_w - margin)
        x = (u - K.cx) * z / K.fx
        y = config.camera_height - 0.5 * size[2]
        yaw = wrap_angle(rng.uniform(*config.yaw_range))
        obj = ObjectState((x, y, z), tuple(size), yaw, class_id)

        w2d, h2d, bu, bv = project_boxes(K, [obj.center], [obj.size], [obj.yaw])[0]
        if config.box_noise_std > 0:
            w2d, h2d, bu, bv = np.array([w2d, h2d, bu, bv]) + noise_rng.normal(0.0, config.box_noise_std, 4)
            w2d, h2d = max(w2d, 0.0), max(h2d, 0.0)
        box = Box2D(float(w2d), float(h2d), float(bu), float(bv))

        o = relative_orientation(obj).o
        feat_size = np.asarray(obj.size)
        if config.feature_noise_std > 0:
            feat_size = np.maximum(feat_size * (1 + noise_rng.normal(0.0, config.feature_noise_std, 3)), 1e-3)
            o = wrap_angle(o + noise_rng.normal(0.0, config.feature_noise_std))
        feature = make_feature(feat_size, o, class_id, n_cls)

        distant = obj.distance() > config.distant_threshold
        records.append(AnnotationRecord(
            record_id=f"{frame_id:06d}_{k:03d}",
            frame_id=frame_id,
            class_id=class_id,
            box2d=box,
            feature=feature,
            distant=distant,
            box3d=None if distant else obj,
            gt_private=obj,
        ))
    return records


def generate(config: SceneConfig) -> Dataset:
    """Deterministic scene generation; each frame draws from its own (seed, frame) stream."""
    config.validate()
    records = []
    for frame_id in range(config.n_frames):
        records.extend(_sample_frame(config, frame_id))
    return Dataset(config, records)


def split(dataset: Dataset, fractions=(0.7, 0.3), seed: int | None = None):
    """Frame-level split into (train, val)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 2 or min(fractions) < 0 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise BadFractions(f"fractions must be two non-negative numbers summing to 1, got {fractions}")
    frames = dataset.frames
    rng = np.random.default_rng(dataset.config.seed if seed is None else seed)
    perm = rng.permutation(len(frames))
    n_train = int(round(fractions[0] * len(frames)))
    train_frames = {frames[i] for i in perm[:n_train]}
    train = [r for r in dataset.records if r.frame_id in train_frames]
    val = [r for r in dataset.records if r.frame_id not in train_frames]
    return Dataset(dataset.config, train), Dataset(dataset.config, val)


def training_arrays(records):
    """(F, wh, depth, objects) for records that carry 3D labels."""
    rec = [r for r in records if r.box3d is not None]
    F = np.array([r.feature.vec for r in rec], dtype=float)
    wh = np.array([[r.box2d.w2d, r.box2d.h2d] for r in rec], dtype=float)
    depth = np.array([r.box3d.depth() for r in rec], dtype=float)
    return F, wh, depth, [r.box3d for r in rec]
