"""Core value types shared by the tracker, solver, generator and metrics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

BACKGROUND_CLASS = 0
TWO_PI = 2.0 * math.pi


def normalize_yaw(angle: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    angle = float(angle)
    if not math.isfinite(angle):
        raise ValueError(f"yaw must be finite, got {angle}")
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    out = wrapped - math.pi
    # fmod rounding can land exactly on +pi
    if out >= math.pi:
        out -= TWO_PI
    return out


def _vec3(values: Sequence[float], name: str) -> tuple[float, float, float]:
    vals = tuple(map(float, values))
    if len(vals) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(vals)}")
    if not all(map(math.isfinite, vals)):
        raise ValueError(f"{name} must be finite: {vals}")
    return vals  # type: ignore[return-value]


@dataclass(frozen=True)
class Box3D:
    """Oriented box in the world frame (z up, yaw counterclockwise from +x)."""

    center: tuple[float, float, float]
    dims: tuple[float, float, float]  # length, width, height
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "dims", _vec3(self.dims, "dims"))
        if not all(d > 0.0 for d in self.dims):
            raise ValueError(f"box dims must be strictly positive: {self.dims}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def length(self) -> float:
        return self.dims[0]

    @property
    def width(self) -> float:
        return self.dims[1]

    @property
    def height(self) -> float:
        return self.dims[2]

    def measurement(self) -> np.ndarray:
        """7-vector (x, y, z, yaw, l, w, h) observed by the Kalman filter."""
        return np.array([*self.center, self.yaw, *self.dims], dtype=float)

    @classmethod
    def from_measurement(cls, z: Sequence[float]) -> "Box3D":
        z = [float(v) for v in z]
        return cls(center=(z[0], z[1], z[2]), dims=(z[4], z[5], z[6]), yaw=z[3])

    def translated(self, offset: Sequence[float]) -> "Box3D":
        c = self.center
        return Box3D((c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]), self.dims, self.yaw)

    def to_dict(self) -> dict[str, Any]:
        return {"center": list(self.center), "dims": list(self.dims), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Box3D":
        return cls(center=tuple(d["center"]), dims=tuple(d["dims"]), yaw=d["yaw"])


@dataclass(frozen=True)
class Detection:
    box: Box3D
    class_id: int
    score: float
    camera_id: int
    frame_index: int
    velocity_hint: Optional[tuple[float, float, float]] = None
    # ground-truth provenance, for evaluation only; the tracker never reads it
    gt_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.class_id < 1:
            raise ValueError(f"class_id must be >= 1 (0 is background), got {self.class_id}")
        if self.camera_id < 0:
            raise ValueError(f"camera_id must be >= 0, got {self.camera_id}")
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.velocity_hint is not None:
            object.__setattr__(self, "velocity_hint", _vec3(self.velocity_hint, "velocity_hint"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "box": self.box.to_dict(),
            "class_id": self.class_id,
            "score": self.score,
            "camera_id": self.camera_id,
            "frame_index": self.frame_index,
            "velocity_hint": None if self.velocity_hint is None else list(self.velocity_hint),
            "gt_id": self.gt_id,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Detection":
        hint = d.get("velocity_hint")
        return cls(
            box=Box3D.from_dict(d["box"]),
            class_id=int(d["class_id"]),
            score=float(d["score"]),
            camera_id=int(d["camera_id"]),
            frame_index=int(d["frame_index"]),
            velocity_hint=None if hint is None else tuple(hint),
            gt_id=d.get("gt_id"),
        )


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass(frozen=True)
class Tracklet:
    track_id: int
    class_id: int
    kf: Any  # motion.KalmanState
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    misses: int = 0
    last_seen_frame: int = 0
    history: tuple[tuple[int, Box3D], ...] = ()
    score: float = 0.0

    def __post_init__(self) -> None:
        if self.hits < 0 or self.misses < 0:
            raise ValueError("hits and misses must be non-negative")

    @property
    def box(self) -> Box3D:
        return self.kf.box()


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``rotation``/``translation`` map world points into the
    camera frame (x right, y down, z forward)."""

    camera_id: int
    rotation: tuple[tuple[float, float, float], ...]
    translation: tuple[float, float, float]
    fx: float
    fy: float
    cx: float
    cy: float
    image_size: tuple[int, int]
    max_range: float

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0.0) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", tuple(tuple(float(v) for v in row) for row in R))
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    def world_to_camera(self, point: Sequence[float]) -> np.ndarray:
        return np.asarray(self.rotation) @ np.asarray(point, dtype=float) + np.asarray(self.translation)

    def center_in_world(self) -> np.ndarray:
        R = np.asarray(self.rotation)
        return -R.T @ np.asarray(self.translation)

    def to_dict(self) -> dict[str, Any]:
        return {
            "camera_id": self.camera_id,
            "rotation": [list(r) for r in self.rotation],
            "translation": list(self.translation),
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "image_size": list(self.image_size),
            "max_range": self.max_range,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CameraModel":
        return cls(
            camera_id=int(d["camera_id"]),
            rotation=tuple(tuple(r) for r in d["rotation"]),
            translation=tuple(d["translation"]),
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            image_size=tuple(d["image_size"]),
            max_range=float(d["max_range"]),
        )


def detection_sort_key(det: Detection) -> tuple:
    # full tuple so the order is a function of contents alone
    return (det.camera_id, -det.score, det.class_id, det.box.center, det.box.dims, det.box.yaw)


@dataclass(frozen=True)
class FrameBundle:
    frame_index: int
    timestamp: float
    detections: tuple[Detection, ...] = ()
    rig: tuple[CameraModel, ...] = field(default=())

    def __post_init__(self) -> None:
        dets = tuple(sorted(self.detections, key=detection_sort_key))
        if self.rig:
            k = len(self.rig)
            for d in dets:
                if d.camera_id >= k:
                    raise ValueError(f"detection camera_id {d.camera_id} outside rig of size {k}")
        object.__setattr__(self, "detections", dets)
        object.__setattr__(self, "rig", tuple(self.rig))

    @property
    def num_cameras(self) -> int:
        if self.rig:
            return len(self.rig)
        return max((d.camera_id for d in self.detections), default=0) + 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "frame_index": self.frame_index,
            "timestamp": self.timestamp,
            "detections": [d.to_dict() for d in self.detections],
            "rig": [c.to_dict() for c in self.rig],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FrameBundle":
        return cls(
            frame_index=int(d["frame_index"]),
            timestamp=float(d["timestamp"]),
            detections=tuple(Detection.from_dict(x) for x in d["detections"]),
            rig=tuple(CameraModel.from_dict(c) for c in d["rig"]),
        )
