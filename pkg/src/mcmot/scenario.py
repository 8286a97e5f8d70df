"""Deterministic synthetic multi-camera scenarios and their JSON Lines files.

An ego rig of K pinhole cameras (all mounted at the ego origin, evenly spread
in azimuth by default) drives along +x. Objects follow constant-speed
trajectories with a small constant turn rate. Every frame each camera reports
a noisy detection for each object whose centre is inside its frustum, drops
it with probability ``miss_rate``, and adds Poisson clutter.

Files written by :func:`save`:

* ``<prefix>.frames.jsonl``: header ``{"schema_version", "config"}``, then one
  FrameBundle per line.
* ``<prefix>.gt.jsonl``: the same header, then one ground-truth frame per line.

JSON schemas for both live in ``mcmot/schemas``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from .model import Box3D, CameraModel, Detection, FrameBundle, normalize_yaw
from .rng import SplitMix64

SCHEMA_VERSION = 1
IMAGE_SIZE = (1600, 900)
MOUNT_HEIGHT = 1.5
MIN_CLUTTER_DEPTH = 3.0

# class_id -> (length, width, height), spawn weight
CLASS_TEMPLATES: dict[int, tuple[tuple[float, float, float], float]] = {
    1: ((4.5, 1.9, 1.6), 0.6),   # car
    2: ((0.8, 0.7, 1.8), 0.25),  # pedestrian
    3: ((8.0, 2.5, 3.0), 0.15),  # truck
}


class ScenarioFormatError(ValueError):
    """A scenario file does not match the expected layout."""


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    num_cameras: int = 6
    fov_deg: float = 70.0
    yaw_offsets_deg: Optional[tuple[float, ...]] = None
    max_range: float = 60.0
    num_objects: int = 20
    num_frames: int = 200
    dt: float = 0.1
    object_speed_range: tuple[float, float] = (0.0, 3.0)
    max_turn_rate: float = 0.05
    spawn_radius: tuple[float, float] = (4.0, 35.0)
    detection_noise_sigma: tuple[float, float, float] = (0.3, 0.1, 0.2)
    miss_rate: float = 0.1
    clutter_rate: float = 0.5
    ego_speed: float = 1.0

    def __post_init__(self) -> None:
        if self.num_cameras < 1:
            raise ValueError("num_cameras must be >= 1")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov_deg must be in (0, 180)")
        if self.yaw_offsets_deg is not None:
            offs = tuple(float(v) for v in self.yaw_offsets_deg)
            if len(offs) != self.num_cameras:
                raise ValueError("yaw_offsets_deg needs one entry per camera")
            object.__setattr__(self, "yaw_offsets_deg", offs)
        if self.max_range <= MIN_CLUTTER_DEPTH:
            raise ValueError(f"max_range must exceed {MIN_CLUTTER_DEPTH}")
        if self.num_objects < 0 or self.num_frames < 0:
            raise ValueError("num_objects and num_frames must be >= 0")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        lo, hi = self.object_speed_range
        if not 0.0 <= lo <= hi:
            raise ValueError("object_speed_range must satisfy 0 <= low <= high")
        r0, r1 = self.spawn_radius
        if not 0.0 < r0 <= r1:
            raise ValueError("spawn_radius must satisfy 0 < inner <= outer")
        if len(self.detection_noise_sigma) != 3 or min(self.detection_noise_sigma) < 0.0:
            raise ValueError("detection_noise_sigma must be three non-negative values")
        if not 0.0 <= self.miss_rate < 1.0:
            raise ValueError(f"miss_rate must be in [0, 1), got {self.miss_rate}")
        if self.clutter_rate < 0.0:
            raise ValueError(f"clutter_rate must be >= 0, got {self.clutter_rate}")
        if self.max_turn_rate < 0.0:
            raise ValueError("max_turn_rate must be >= 0")
        object.__setattr__(self, "object_speed_range", (float(lo), float(hi)))
        object.__setattr__(self, "spawn_radius", (float(r0), float(r1)))
        object.__setattr__(self, "detection_noise_sigma", tuple(float(v) for v in self.detection_noise_sigma))

    @property
    def camera_yaws(self) -> tuple[float, ...]:
        if self.yaw_offsets_deg is not None:
            return tuple(math.radians(v) for v in self.yaw_offsets_deg)
        return tuple(2.0 * math.pi * k / self.num_cameras for k in range(self.num_cameras))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario config field(s): {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass(frozen=True)
class GTObject:
    gt_id: int
    class_id: int
    box: Box3D
    velocity: tuple[float, float, float]
    visible_cameras: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "gt_id": self.gt_id,
            "class_id": self.class_id,
            "box": self.box.to_dict(),
            "velocity": list(self.velocity),
            "visible_cameras": list(self.visible_cameras),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GTObject":
        return cls(
            gt_id=int(d["gt_id"]),
            class_id=int(d["class_id"]),
            box=Box3D.from_dict(d["box"]),
            velocity=tuple(float(v) for v in d["velocity"]),
            visible_cameras=tuple(int(c) for c in d["visible_cameras"]),
        )


@dataclass(frozen=True)
class GTFrame:
    frame_index: int
    timestamp: float
    objects: tuple[GTObject, ...]

    def visible(self) -> tuple[GTObject, ...]:
        return tuple(o for o in self.objects if o.visible_cameras)

    def to_dict(self) -> dict[str, Any]:
        return {
            "frame_index": self.frame_index,
            "timestamp": self.timestamp,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GTFrame":
        return cls(
            frame_index=int(d["frame_index"]),
            timestamp=float(d["timestamp"]),
            objects=tuple(GTObject.from_dict(o) for o in d["objects"]),
        )


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    gt: tuple[GTFrame, ...]
    frames: tuple[FrameBundle, ...]


def make_camera(camera_id: int, yaw: float, position: Sequence[float], fov_deg: float, max_range: float,
                image_size: tuple[int, int] = IMAGE_SIZE) -> CameraModel:
    """Level pinhole camera looking along world heading ``yaw`` (x right, y down, z forward)."""
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])
    t = -R @ np.asarray(position, dtype=float)
    w, h = image_size
    f = 0.5 * w / math.tan(math.radians(fov_deg) / 2.0)
    return CameraModel(camera_id, tuple(map(tuple, R)), tuple(t), f, f, 0.5 * w, 0.5 * h, (w, h), max_range)


def make_rig(cfg: ScenarioConfig, ego_x: float = 0.0) -> tuple[CameraModel, ...]:
    pos = (ego_x, 0.0, MOUNT_HEIGHT)
    return tuple(make_camera(k, yaw, pos, cfg.fov_deg, cfg.max_range) for k, yaw in enumerate(cfg.camera_yaws))


def frustum_contains(cam: CameraModel, point: Sequence[float]) -> bool:
    """Strict test: in front of the camera, projecting strictly inside the image,
    within ``max_range`` (Euclidean). Points exactly on an image edge are outside."""
    x, y, z = cam.world_to_camera(point)
    if not z > 0.0:
        return False
    if x * x + y * y + z * z > cam.max_range * cam.max_range:
        return False
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    w, h = cam.image_size
    return 0.0 < u < w and 0.0 < v < h


@dataclass
class _Mover:
    gt_id: int
    class_id: int
    dims: tuple[float, float, float]
    x: float
    y: float
    heading: float
    speed: float
    turn_rate: float

    def box(self) -> Box3D:
        return Box3D((self.x, self.y, 0.5 * self.dims[2]), self.dims, self.heading)

    def velocity(self) -> tuple[float, float, float]:
        return (self.speed * math.cos(self.heading), self.speed * math.sin(self.heading), 0.0)

    def advance(self, dt: float) -> None:
        self.x += self.speed * math.cos(self.heading) * dt
        self.y += self.speed * math.sin(self.heading) * dt
        self.heading = normalize_yaw(self.heading + self.turn_rate * dt)


def _spawn(cfg: ScenarioConfig, rng: SplitMix64) -> list[_Mover]:
    classes = tuple(CLASS_TEMPLATES)
    weights = tuple(CLASS_TEMPLATES[c][1] for c in classes)
    movers: list[_Mover] = []
    r0, r1 = cfg.spawn_radius
    for gid in range(cfg.num_objects):
        cls = classes[rng.choice_index(weights)]
        dims = CLASS_TEMPLATES[cls][0]
        # keep initial footprints apart so ground truth never overlaps at t=0
        for _ in range(100):
            r = math.sqrt(rng.uniform(r0 * r0, r1 * r1))
            phi = rng.uniform(-math.pi, math.pi)
            x, y = r * math.cos(phi), r * math.sin(phi)
            if all(math.hypot(x - m.x, y - m.y) > 0.5 * (max(dims[:2]) + max(m.dims[:2])) + 1.0 for m in movers):
                break
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(*cfg.object_speed_range)
        turn = rng.uniform(-cfg.max_turn_rate, cfg.max_turn_rate)
        movers.append(_Mover(gid, cls, dims, x, y, heading, speed, turn))
    return movers


def _noisy_box(box: Box3D, sigma: tuple[float, float, float], rng: SplitMix64) -> Box3D:
    sp, sd, sy = sigma
    c = box.center
    center = (c[0] + rng.normal(0.0, sp), c[1] + rng.normal(0.0, sp), c[2] + rng.normal(0.0, sp))
    dims = tuple(max(d + rng.normal(0.0, sd), 0.1) for d in box.dims)
    return Box3D(center, dims, box.yaw + rng.normal(0.0, sy))


def _clutter(cam: CameraModel, cfg: ScenarioConfig, frame_index: int, rng: SplitMix64) -> Optional[Detection]:
    classes = tuple(CLASS_TEMPLATES)
    cls = classes[rng.choice_index(tuple(CLASS_TEMPLATES[c][1] for c in classes))]
    dims = CLASS_TEMPLATES[cls][0]
    half = math.radians(cfg.fov_deg) / 2.0
    R = np.asarray(cam.rotation)
    forward_yaw = math.atan2(R[2, 1], R[2, 0])
    origin = cam.center_in_world()
    for _ in range(20):
        ang = forward_yaw + rng.uniform(-half, half)
        depth = rng.uniform(MIN_CLUTTER_DEPTH, cam.max_range)
        center = (origin[0] + depth * math.cos(ang), origin[1] + depth * math.sin(ang), 0.5 * dims[2])
        if frustum_contains(cam, center):
            box = Box3D(center, dims, rng.uniform(-math.pi, math.pi))
            return Detection(box, cls, rng.uniform(0.0, 0.6), cam.camera_id, frame_index)
    return None


def generate(cfg: ScenarioConfig) -> Scenario:
    """Build a scenario; identical configs give bit-identical output."""
    root = SplitMix64(cfg.seed)
    spawn_rng, det_rng = root.fork(), root.fork()
    movers = _spawn(cfg, spawn_rng)
    gt_frames: list[GTFrame] = []
    frames: list[FrameBundle] = []
    for t in range(cfg.num_frames):
        ts = t * cfg.dt
        rig = make_rig(cfg, cfg.ego_speed * ts)
        objects = []
        dets: list[Detection] = []
        for m in movers:
            box = m.box()
            visible = tuple(cam.camera_id for cam in rig if frustum_contains(cam, box.center))
            objects.append(GTObject(m.gt_id, m.class_id, box, m.velocity(), visible))
            for k in visible:
                if det_rng.uniform() < cfg.miss_rate:
                    continue
                noisy = _noisy_box(box, cfg.detection_noise_sigma, det_rng)
                score = det_rng.uniform(0.5, 1.0)
                # a noisy centre pushed out of view counts as a miss
                if not frustum_contains(rig[k], noisy.center):
                    continue
                dets.append(Detection(noisy, m.class_id, score, k, t, gt_id=m.gt_id))
        for cam in rig:
            for _ in range(det_rng.poisson(cfg.clutter_rate)):
                det = _clutter(cam, cfg, t, det_rng)
                if det is not None:
                    dets.append(det)
        gt_frames.append(GTFrame(t, ts, tuple(objects)))
        frames.append(FrameBundle(t, ts, tuple(dets), rig))
        for m in movers:
            m.advance(cfg.dt)
    return Scenario(cfg, tuple(gt_frames), tuple(frames))


def co_visibility_fraction(scenario: Scenario) -> float:
    """Share of (object, frame) pairs seen by at least two cameras."""
    total = sum(len(f.objects) for f in scenario.gt)
    multi = sum(1 for f in scenario.gt for o in f.objects if len(o.visible_cameras) >= 2)
    return multi / total if total else 0.0


# ---------------------------------------------------------------- persistence

def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def frames_path(prefix: str | Path) -> Path:
    return Path(f"{prefix}.frames.jsonl")


def gt_path(prefix: str | Path) -> Path:
    return Path(f"{prefix}.gt.jsonl")


def load_schema(name: str) -> dict[str, Any]:
    text = resources.files("mcmot").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def write_jsonl(path: Path, header: dict[str, Any], rows: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for row in rows:
            fh.write(_dumps(row) + "\n")


def save(scenario: Scenario, prefix: str | Path) -> tuple[Path, Path]:
    header = {"schema_version": SCHEMA_VERSION, "config": scenario.config.to_dict()}
    fp, gp = frames_path(prefix), gt_path(prefix)
    write_jsonl(fp, header, [f.to_dict() for f in scenario.frames])
    write_jsonl(gp, header, [g.to_dict() for g in scenario.gt])
    return fp, gp


def _iter_jsonl(path: Path) -> Iterator[tuple[int, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise ScenarioFormatError(f"{path}:{lineno}: empty line")
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScenarioFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def _read(path: Path, parse) -> tuple[dict[str, Any], list[Any]]:
    rows = _iter_jsonl(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise ScenarioFormatError(f"{path}:1: missing header line") from None
    if not isinstance(header, dict) or header.get("schema_version") != SCHEMA_VERSION or "config" not in header:
        raise ScenarioFormatError(f"{path}:{lineno}: header must carry schema_version {SCHEMA_VERSION} and config")
    out = []
    for lineno, row in rows:
        try:
            out.append(parse(row))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ScenarioFormatError(f"{path}:{lineno}: {type(exc).__name__}: {exc}") from exc
    return header, out


def read_frames(path: str | Path) -> tuple[dict[str, Any], list[FrameBundle]]:
    return _read(Path(path), FrameBundle.from_dict)


def read_gt(path: str | Path) -> tuple[dict[str, Any], list[GTFrame]]:
    return _read(Path(path), GTFrame.from_dict)


def load(prefix: str | Path) -> Scenario:
    fp, gp = frames_path(prefix), gt_path(prefix)
    header, frames = read_frames(fp)
    gt_header, gt = read_gt(gp)
    if gt_header["config"] != header["config"]:
        raise ScenarioFormatError(f"{gp}:1: config differs from {fp}")
    try:
        cfg = ScenarioConfig.from_dict(header["config"])
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"{fp}:1: bad config: {exc}") from exc
    return Scenario(cfg, tuple(gt), tuple(frames))


# ------------------------------------------------------- box-dump ingestion

def _quaternion_yaw(q: Sequence[float]) -> float:
    w, x, y, z = (float(v) for v in q)
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def ingest_box_dump(doc: dict[str, Any], class_map: dict[str, int], dt: float = 0.5,
                    camera_id: int = 0) -> list[FrameBundle]:
    """Best-effort conversion of a nuScenes-style result dump into frames.

    Expects ``{"results": {sample_token: [box, ...]}}`` where each box has
    ``translation``, ``size`` (w, l, h), ``rotation`` (w, x, y, z quaternion),
    a ``tracking_name`` or ``detection_name`` and a score. Samples are taken in
    document order, ``dt`` apart. Unknown class names are skipped. All boxes are
    attributed to one camera because the dump does not carry camera ids.
    """
    frames = []
    for t, (_, boxes) in enumerate(doc["results"].items()):
        dets = []
        for b in boxes:
            name = b.get("tracking_name", b.get("detection_name"))
            if name not in class_map:
                continue
            w, l, h = b["size"]
            box = Box3D(tuple(b["translation"]), (l, w, h), _quaternion_yaw(b["rotation"]))
            score = float(b.get("tracking_score", b.get("detection_score", 1.0)))
            vel = b.get("velocity")
            hint = None if vel is None else (float(vel[0]), float(vel[1]), 0.0)
            dets.append(Detection(box, class_map[name], min(max(score, 0.0), 1.0), camera_id, t, hint))
        frames.append(FrameBundle(t, t * dt, tuple(dets)))
    return frames
