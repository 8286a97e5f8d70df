"""Multi-camera track-by-detection with one global association per frame.

Per frame: predict every track, build one world-frame cost matrix against
the detections pooled from all cameras, associate, update, manage lifecycle.
``association="fota"`` lets one track absorb up to K detections (one per
co-visible camera); ``"km"`` is the one-to-one Hungarian baseline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Iterator, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import fota
from .fota import UNMATCHED, Assignment
from .geometry import d_giou_2d, d_giou_3d, giou_lower_bound, giou_lower_bound_matrix, mahalanobis_many
from .model import Box3D, Detection, FrameBundle, Tracklet, TrackStatus
from .motion import KalmanConfig, kf_init, kf_predict, update_with_multiple

METRICS = ("mahalanobis", "giou2d", "giou3d")
ASSOCIATIONS = ("fota", "km")
DEFAULT_GATES = {"mahalanobis": 11.07, "giou2d": 1.5, "giou3d": 1.5}
# added to the gate for forbidden pairs; finite so the Sinkhorn kernel stays defined
GATE_PENALTY = 100.0


@dataclass(frozen=True)
class FotaConfig:
    gamma: float = 0.1
    max_iters: int = 50
    tol: float = 1e-6
    min_mass: float = 0.3


@dataclass(frozen=True)
class LifecycleConfig:
    confirm_hits: int = 2
    max_misses: int = 2
    rebirth_window_frames: int = 10

    def __post_init__(self) -> None:
        if self.confirm_hits < 1:
            raise ValueError("confirm_hits must be >= 1")
        if self.max_misses < 0:
            raise ValueError("max_misses must be >= 0")
        if self.rebirth_window_frames < 0:
            raise ValueError("rebirth_window_frames must be >= 0")


@dataclass(frozen=True)
class TrackerConfig:
    distance_metric: str = "mahalanobis"
    gate_threshold: Optional[float] = None
    association: str = "fota"
    fota: FotaConfig = field(default_factory=FotaConfig)
    lifecycle: LifecycleConfig = field(default_factory=LifecycleConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)

    def __post_init__(self) -> None:
        if self.distance_metric not in METRICS:
            raise ValueError(f"distance_metric must be one of {METRICS}, got {self.distance_metric!r}")
        if self.association not in ASSOCIATIONS:
            raise ValueError(f"association must be one of {ASSOCIATIONS}, got {self.association!r}")
        if self.gate_threshold is None:
            object.__setattr__(self, "gate_threshold", DEFAULT_GATES[self.distance_metric])
        if not self.gate_threshold > 0:
            raise ValueError("gate_threshold must be > 0")

    @property
    def gate(self) -> float:
        return float(self.gate_threshold)  # type: ignore[arg-type]

    def to_dict(self) -> dict[str, Any]:
        return {
            "distance_metric": self.distance_metric,
            "gate_threshold": self.gate_threshold,
            "association": self.association,
            "fota": vars(self.fota).copy(),
            "lifecycle": vars(self.lifecycle).copy(),
            "kalman": self.kalman.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrackerConfig":
        return cls(
            distance_metric=d.get("distance_metric", "mahalanobis"),
            gate_threshold=d.get("gate_threshold"),
            association=d.get("association", "fota"),
            fota=FotaConfig(**d.get("fota", {})),
            lifecycle=LifecycleConfig(**d.get("lifecycle", {})),
            kalman=KalmanConfig.from_dict(d.get("kalman", {})),
        )


@dataclass(frozen=True)
class LostTrack:
    track: Tracklet
    expiry_frame: int


@dataclass(frozen=True)
class TrackerState:
    tracks: tuple[Tracklet, ...] = ()
    next_track_id: int = 0
    frame_index: int = -1
    timestamp: Optional[float] = None
    lost_pool: tuple[LostTrack, ...] = ()

    def all_ids(self) -> list[int]:
        return [t.track_id for t in self.tracks] + [lt.track.track_id for lt in self.lost_pool]


@dataclass(frozen=True)
class TrackOutput:
    track_id: int
    class_id: int
    box: Box3D
    score: float
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "track_id": self.track_id,
            "class_id": self.class_id,
            "box": self.box.to_dict(),
            "score": self.score,
            "velocity": list(self.velocity),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrackOutput":
        return cls(
            track_id=int(d["track_id"]),
            class_id=int(d["class_id"]),
            box=Box3D.from_dict(d["box"]),
            score=float(d["score"]),
            velocity=tuple(d.get("velocity", (0.0, 0.0, 0.0))),
        )


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    outputs: tuple[TrackOutput, ...]
    assignment: Assignment
    diagnostics: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "frame_index": self.frame_index,
            "outputs": [o.to_dict() for o in self.outputs],
            "assignment": self.assignment.to_dict(),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FrameResult":
        a = d.get("assignment", {"detection_to_track": [], "track_to_detections": []})
        return cls(
            frame_index=int(d["frame_index"]),
            outputs=tuple(TrackOutput.from_dict(o) for o in d["outputs"]),
            assignment=Assignment(tuple(a["detection_to_track"]), tuple(tuple(t) for t in a["track_to_detections"])),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def _pair_distance(track: Tracklet, det: Detection, cfg: TrackerConfig) -> float:
    if cfg.distance_metric == "mahalanobis":
        S = track.kf.innovation_cov(cfg.kalman)
        return float(mahalanobis_many(track.kf.mean[:7], S, det.box.measurement()[None, :])[0])
    volumetric = cfg.distance_metric == "giou3d"
    box = track.kf.box()
    if giou_lower_bound(box, det.box, volumetric) > cfg.gate:
        return cfg.gate + GATE_PENALTY
    return d_giou_3d(box, det.box) if volumetric else d_giou_2d(box, det.box)


def build_cost_matrix(tracks: list[Tracklet] | tuple[Tracklet, ...], dets: list[Detection] | tuple[Detection, ...],
                      cfg: TrackerConfig) -> np.ndarray:
    """Distance between every predicted track and detection.

    Cross-class pairs and pairs beyond the gate get ``gate + GATE_PENALTY``.
    """
    n, m = len(tracks), len(dets)
    gated = cfg.gate + GATE_PENALTY
    C = np.full((n, m), gated)
    if n == 0 or m == 0:
        return C
    det_classes = np.array([d.class_id for d in dets])
    if cfg.distance_metric == "mahalanobis":
        Z = np.stack([d.box.measurement() for d in dets])
        for i, trk in enumerate(tracks):
            cols = np.nonzero(det_classes == trk.class_id)[0]
            if cols.size == 0:
                continue
            S = trk.kf.innovation_cov(cfg.kalman)
            C[i, cols] = mahalanobis_many(trk.kf.mean[:7], S, Z[cols])
    else:
        volumetric = cfg.distance_metric == "giou3d"
        dist_fn = d_giou_3d if volumetric else d_giou_2d
        det_boxes = [d.box for d in dets]
        trk_boxes = [trk.kf.box() for trk in tracks]
        track_classes = np.array([trk.class_id for trk in tracks])
        candidate = (track_classes[:, None] == det_classes[None, :])
        candidate &= giou_lower_bound_matrix(trk_boxes, det_boxes, volumetric) <= cfg.gate
        for i, j in zip(*np.nonzero(candidate)):
            C[i, j] = dist_fn(trk_boxes[i], det_boxes[j])
    C[C > cfg.gate] = gated
    return C


def _associate_fota(C: np.ndarray, num_cameras: int, cfg: TrackerConfig) -> tuple[Assignment, int, float]:
    n, m = C.shape
    if n == 0 or m == 0:
        return Assignment.empty(n, m), 0, 0.0
    fc = cfg.fota
    problem = fota.make_problem(C, p=np.full(n, float(num_cameras)), q=np.ones(m), epsilon=cfg.gate,
                                gamma=fc.gamma, max_iters=fc.max_iters, tol=fc.tol)
    if problem is None:
        return Assignment.empty(n, m), 0, 0.0
    plan, assignment = fota.solve_with_plan(problem, fc.min_mass)
    det_to_track = [i if i != UNMATCHED and C[i, j] <= cfg.gate else UNMATCHED
                    for j, i in enumerate(assignment.detection_to_track)]
    return Assignment.from_detection_map(det_to_track, n), plan.iterations_used, plan.marginal_error


def _associate_km(C: np.ndarray, cfg: TrackerConfig) -> Assignment:
    n, m = C.shape
    det_to_track = [UNMATCHED] * m
    if n and m:
        rows, cols = linear_sum_assignment(C)
        for i, j in zip(rows, cols):
            if C[i, j] <= cfg.gate:
                det_to_track[j] = int(i)
    return Assignment.from_detection_map(det_to_track, n)


def _absorb(track: Tracklet, dets: list[Detection], frame_index: int, cfg: TrackerConfig) -> Tracklet:
    kf, _ = update_with_multiple(track.kf, dets, cfg.kalman)
    hits = track.hits + 1
    status = track.status
    if status is not TrackStatus.CONFIRMED and hits >= cfg.lifecycle.confirm_hits:
        status = TrackStatus.CONFIRMED
    return replace(track, kf=kf, hits=hits, misses=0, status=status, last_seen_frame=frame_index,
                   history=track.history + ((frame_index, kf.box()),), score=max(d.score for d in dets))


def _new_track(track_id: int, det: Detection, frame_index: int, cfg: TrackerConfig) -> Tracklet:
    kf = kf_init(det, cfg.kalman)
    status = TrackStatus.CONFIRMED if cfg.lifecycle.confirm_hits <= 1 else TrackStatus.TENTATIVE
    return Tracklet(track_id=track_id, class_id=det.class_id, kf=kf, status=status, hits=1, misses=0,
                    last_seen_frame=frame_index, history=((frame_index, kf.box()),), score=det.score)


def _join_group(groups: list[tuple[Tracklet, list[Detection]]], det: Detection, cfg: TrackerConfig,
                num_cameras: int) -> Optional[int]:
    """Index of the best newborn/reborn group this detection can join (FOTA only):
    same class, a camera not yet in the group, group below K members, within gate."""
    best, best_cost = None, cfg.gate
    for g, (trk, members) in enumerate(groups):
        if trk.class_id != det.class_id or len(members) >= num_cameras:
            continue
        if any(m.camera_id == det.camera_id for m in members):
            continue
        cost = _pair_distance(trk, det, cfg)
        if cost <= best_cost:
            best, best_cost = g, cost
    return best


def step(state: TrackerState, frame: FrameBundle, cfg: TrackerConfig,
         profile: Optional[dict[str, float]] = None) -> tuple[TrackerState, FrameResult]:
    """Advance the tracker by one frame.

    ``profile``, when given, accumulates wall-clock seconds spent building the
    cost matrix (``cost_s``) and associating (``assign_s``); kept out of the
    result so results stay bit-reproducible.
    """
    if frame.frame_index <= state.frame_index:
        raise ValueError(f"frame_index must increase: got {frame.frame_index} after {state.frame_index}")
    t = frame.frame_index
    life = cfg.lifecycle
    num_cameras = max(frame.num_cameras, 1)
    dets = list(frame.detections)

    # 1. predict
    tracks = list(state.tracks)
    lost = [lt for lt in state.lost_pool if lt.expiry_frame >= t]
    if state.timestamp is not None:
        dt = frame.timestamp - state.timestamp
        if dt > 0:
            tracks = [replace(tr, kf=kf_predict(tr.kf, dt, cfg.kalman)) for tr in tracks]
            lost = [replace(lt, track=replace(lt.track, kf=kf_predict(lt.track.kf, dt, cfg.kalman))) for lt in lost]

    # 2. cost matrix, 3. association
    t0 = time.perf_counter()
    C = build_cost_matrix(tracks, dets, cfg)
    t1 = time.perf_counter()
    iterations, marginal_error = 0, 0.0
    if cfg.association == "fota":
        assignment, iterations, marginal_error = _associate_fota(C, num_cameras, cfg)
    else:
        assignment = _associate_km(C, cfg)
    t2 = time.perf_counter()
    if profile is not None:
        profile["cost_s"] = profile.get("cost_s", 0.0) + (t1 - t0)
        profile["assign_s"] = profile.get("assign_s", 0.0) + (t2 - t1)
        profile["frames"] = profile.get("frames", 0) + 1

    # 4. update matched tracks, age the rest
    survivors: list[Tracklet] = []
    num_deaths = 0
    for i, trk in enumerate(tracks):
        assigned = [dets[j] for j in assignment.track_to_detections[i]]
        if assigned:
            survivors.append(_absorb(trk, assigned, t, cfg))
            continue
        trk = replace(trk, misses=trk.misses + 1, hits=0)
        if trk.status is TrackStatus.TENTATIVE:
            num_deaths += 1
        elif trk.misses > life.max_misses:
            num_deaths += 1
            if life.rebirth_window_frames > 0:
                lost.append(LostTrack(replace(trk, status=TrackStatus.LOST), t + life.rebirth_window_frames))
        else:
            survivors.append(trk)

    # unmatched detections: rebirth from the lost pool, then births
    unmatched = [dets[j] for j in range(len(dets)) if assignment.detection_to_track[j] == UNMATCHED]
    unmatched.sort(key=lambda d: -d.score)
    one_to_many = cfg.association == "fota"
    groups: list[tuple[Tracklet, list[Detection]]] = []
    reborn_ids: set[int] = set()
    next_id = state.next_track_id
    for det in unmatched:
        if one_to_many:
            g = _join_group(groups, det, cfg, num_cameras)
            if g is not None:
                groups[g][1].append(det)
                continue
        best, best_cost = None, cfg.gate
        for k, lt in enumerate(lost):
            if lt.track.class_id != det.class_id:
                continue
            cost = _pair_distance(lt.track, det, cfg)
            if cost <= best_cost:
                best, best_cost = k, cost
        if best is not None:
            trk = replace(lost.pop(best).track, status=TrackStatus.CONFIRMED, misses=0, hits=0)
            reborn_ids.add(trk.track_id)
            groups.append((trk, [det]))
            continue
        groups.append((_new_track(next_id, det, t, cfg), [det]))
        next_id += 1

    num_births = 0
    for trk, members in groups:
        if trk.track_id in reborn_ids:
            survivors.append(_absorb(trk, members, t, cfg))
            continue
        num_births += 1
        if len(members) > 1:
            trk = _absorb(replace(trk, hits=0), members, t, cfg)
            # fused co-visible detections still count as a single first sighting
            trk = replace(trk, hits=1, status=TrackStatus.CONFIRMED if life.confirm_hits <= 1 else TrackStatus.TENTATIVE)
        survivors.append(trk)

    outputs = tuple(
        TrackOutput(tr.track_id, tr.class_id, tr.kf.box(), tr.score, tuple(float(v) for v in tr.kf.velocity))
        for tr in sorted(survivors, key=lambda tr: tr.track_id)
        if tr.status is TrackStatus.CONFIRMED and tr.misses == 0
    )
    new_state = TrackerState(
        tracks=tuple(survivors),
        next_track_id=next_id,
        frame_index=t,
        timestamp=frame.timestamp,
        lost_pool=tuple(lost),
    )
    result = FrameResult(
        frame_index=t,
        outputs=outputs,
        assignment=assignment,
        diagnostics={
            "num_births": num_births,
            "num_deaths": num_deaths,
            "num_rebirths": len(reborn_ids),
            "solver_iterations": iterations,
            "marginal_error": marginal_error,
        },
    )
    return new_state, result


def km_baseline_step(state: TrackerState, frame: FrameBundle, cfg: TrackerConfig,
                     profile: Optional[dict[str, float]] = None) -> tuple[TrackerState, FrameResult]:
    """Same pipeline with one-to-one Hungarian association and per-detection births."""
    return step(state, frame, replace(cfg, association="km"), profile)


def iter_run(frames: Iterable[FrameBundle], cfg: TrackerConfig,
             profile: Optional[dict[str, float]] = None) -> Iterator[FrameResult]:
    state = TrackerState()
    for frame in frames:
        state, result = step(state, frame, cfg, profile)
        yield result


def run(frames: Iterable[FrameBundle], cfg: TrackerConfig, profile: Optional[dict[str, float]] = None) -> list[FrameResult]:
    return list(iter_run(frames, cfg, profile))
