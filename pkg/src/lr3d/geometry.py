"""Pinhole projection between 3D object states and 2D box descriptors.

Camera frame: x right, y down, z forward. Yaw rotates about the camera y axis;
at yaw=0 the object's length axis is aligned with camera x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from lr3d.exceptions import CornerBehindCamera, NonPositiveDepth

__all__ = [
    "CameraIntrinsics",
    "ObjectState",
    "Box2D",
    "RelativeOrientation",
    "wrap_angle",
    "box_corners",
    "project_box",
    "project_boxes",
    "project_point",
    "relative_orientation",
    "move_along_ray",
    "synthesize_pair",
    "back_project",
]


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    img_w: float
    img_h: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.img_w and 0 < self.cy < self.img_h):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("fx", "fy", "cx", "cy", "img_w", "img_h")}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**{k: float(d[k]) for k in ("fx", "fy", "cx", "cy", "img_w", "img_h")})


@dataclass(frozen=True)
class ObjectState:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # (l, w, h)
    yaw: float
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "yaw", float(self.yaw))
        if len(self.center) != 3 or len(self.size) != 3:
            raise ValueError("center and size must be 3-vectors")

    def depth(self) -> float:
        return self.center[2]

    def distance(self) -> float:
        return math.sqrt(sum(c * c for c in self.center))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "size": list(self.size),
                "yaw": self.yaw, "class_id": int(self.class_id)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectState":
        return cls(tuple(d["center"]), tuple(d["size"]), d["yaw"], int(d.get("class_id", 0)))


@dataclass(frozen=True)
class RelativeOrientation:
    o: float


@dataclass(frozen=True)
class Box2D:
    w2d: float
    h2d: float
    u: float = 0.0
    v: float = 0.0

    def to_dict(self) -> dict:
        return {"w2d": float(self.w2d), "h2d": float(self.h2d), "u": float(self.u), "v": float(self.v)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box2D":
        return cls(float(d["w2d"]), float(d["h2d"]), float(d["u"]), float(d["v"]))


_UNIT_CORNERS = 0.5 * np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
)


def box_corners(centers, sizes, yaws) -> np.ndarray:
    """Corners of oriented boxes, shape (N, 8, 3).

    ``sizes`` columns are (l, w, h): l along object x, h along camera y, w along object z.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    sizes = np.atleast_2d(np.asarray(sizes, dtype=float))
    yaws = np.atleast_1d(np.asarray(yaws, dtype=float))
    # object axes: x=length, y=height, z=width
    local = _UNIT_CORNERS[None, :, :] * sizes[:, None, [0, 2, 1]]
    c, s = np.cos(yaws)[:, None], np.sin(yaws)[:, None]
    x = c * local[..., 0] + s * local[..., 2]
    z = -s * local[..., 0] + c * local[..., 2]
    out = np.stack([x, local[..., 1], z], axis=-1)
    return out + centers[:, None, :]


def project_boxes(K: CameraIntrinsics, centers, sizes, yaws) -> np.ndarray:
    """Vectorised corner-AABB projection; returns (N, 4) columns (w2d, h2d, u, v)."""
    corners = box_corners(centers, sizes, yaws)
    z = corners[..., 2]
    if np.any(z <= 0):
        raise CornerBehindCamera("box corner at or behind the camera plane")
    u = K.fx * corners[..., 0] / z + K.cx
    v = K.fy * corners[..., 1] / z + K.cy
    umin, umax = u.min(axis=1), u.max(axis=1)
    vmin, vmax = v.min(axis=1), v.max(axis=1)
    return np.stack([umax - umin, vmax - vmin, 0.5 * (umax + umin), 0.5 * (vmax + vmin)], axis=1)


def project_box(K: CameraIntrinsics, obj: ObjectState) -> Box2D:
    """Axis-aligned bounding box of the 8 projected corners, unclipped."""
    w, h, u, v = project_boxes(K, [obj.center], [obj.size], [obj.yaw])[0]
    return Box2D(float(w), float(h), float(u), float(v))


def project_point(K: CameraIntrinsics, p) -> tuple[float, float]:
    x, y, z = (float(c) for c in p)
    if z <= 0:
        raise CornerBehindCamera("point at or behind the camera plane")
    return K.fx * x / z + K.cx, K.fy * y / z + K.cy


def relative_orientation(obj: ObjectState) -> RelativeOrientation:
    x, _, z = obj.center
    return RelativeOrientation(wrap_angle(obj.yaw - math.atan2(x, z)))


def move_along_ray(obj: ObjectState, d_star: float) -> ObjectState:
    """Slide ``obj`` along the viewing ray through its center until its depth is ``d_star``.

    Relative orientation is preserved, not global yaw.
    """
    if not d_star > 0:
        raise NonPositiveDepth(f"target depth must be positive, got {d_star}")
    if d_star == obj.center[2]:
        return obj
    scale = d_star / obj.center[2]
    x, y, z = (c * scale for c in obj.center)
    o = relative_orientation(obj).o
    return replace(obj, center=(x, y, z), yaw=wrap_angle(o + math.atan2(x, z)))


def synthesize_pair(K: CameraIntrinsics, obj: ObjectState, d_star: float) -> tuple[Box2D, float]:
    """Projection-augmentation pair: the box the object would have at depth ``d_star``."""
    return project_box(K, move_along_ray(obj, d_star)), float(d_star)


def back_project(K: CameraIntrinsics, u: float, v: float, depth: float) -> tuple[float, float, float]:
    """Point on the ray through pixel (u, v) whose z equals ``depth``."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    return ((u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, float(depth))
