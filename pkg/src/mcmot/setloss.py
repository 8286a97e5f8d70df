"""Set-prediction loss for joint detection and tracking queries.

Pure functions over boxes and class distributions; no learning happens here.
Queries come in two kinds: object queries (fresh detections) and track
queries carrying the id they tracked at the previous frame. Matching:

* a track query is bound to the ground truth with its id when that object is
  still visible, otherwise to background;
* every visible ground truth not claimed by a track query is matched against
  the object queries by optimal transport on :func:`match_cost`;
* predictions left over are background.

The per-query loss is ``-p(cls) + L_box`` for matched queries and
``-p(background)`` otherwise, with raw probabilities (no logarithm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import fota
from .fota import UNMATCHED
from .geometry import d_giou_3d
from .model import BACKGROUND_CLASS, Box3D

Matching = tuple[Optional[int], ...]

SUBMATCH_GAMMA = 0.01
SUBMATCH_MAX_ITERS = 5000
SUBMATCH_TOL = 1e-9


@dataclass(frozen=True)
class QueryPrediction:
    box: Box3D
    class_probs: tuple[float, ...]
    # None for an object query; the previous-frame id for a track query
    prev_track_id: Optional[int] = None

    def __post_init__(self) -> None:
        probs = tuple(float(v) for v in self.class_probs)
        if len(probs) < 2:
            raise ValueError("class_probs needs background plus at least one class")
        if any(not 0.0 <= v <= 1.0 for v in probs):
            raise ValueError("class probabilities must lie in [0, 1]")
        if abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ValueError(f"class_probs must sum to 1, got {math.fsum(probs)}")
        object.__setattr__(self, "class_probs", probs)

    @property
    def is_track_query(self) -> bool:
        return self.prev_track_id is not None


@dataclass(frozen=True)
class GroundTruthTrack:
    track_id: int
    class_id: int
    box_t: Box3D
    visible_t: bool = True
    visible_prev: bool = False

    def __post_init__(self) -> None:
        if self.class_id < 1:
            raise ValueError("ground-truth class_id must be >= 1")


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    # metres per unit in the l1 box term
    scene_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_l1 < 0.0 or self.lambda_giou < 0.0:
            raise ValueError("loss weights must be >= 0")
        if not self.scene_scale > 0.0:
            raise ValueError("scene_scale must be > 0")


def box_params(box: Box3D, scale: float = 1.0) -> np.ndarray:
    """(x, y, z, l, w, h, sin yaw, cos yaw) with lengths divided by ``scale``."""
    return np.array([*(c / scale for c in box.center), *(d / scale for d in box.dims),
                     math.sin(box.yaw), math.cos(box.yaw)])


def box_loss(gt_box: Box3D, pred_box: Box3D, w: LossWeights) -> float:
    l1 = float(np.abs(box_params(gt_box, w.scene_scale) - box_params(pred_box, w.scene_scale)).sum())
    return w.lambda_l1 * l1 + w.lambda_giou * d_giou_3d(gt_box, pred_box)


def _prob(pred: QueryPrediction, class_id: int) -> float:
    if class_id >= len(pred.class_probs):
        raise ValueError(f"class {class_id} outside the prediction's {len(pred.class_probs)} classes")
    return pred.class_probs[class_id]


def match_cost(gt: GroundTruthTrack, pred: QueryPrediction, w: LossWeights = LossWeights()) -> float:
    return -_prob(pred, gt.class_id) + box_loss(gt.box_t, pred.box, w)


def _submatch(cost: np.ndarray) -> list[int]:
    """Rows (ground truths) to columns (object queries) via fractional OT with
    unit masses and s = min(n, m), then per-column argmax. Returns a column
    index or UNMATCHED per row."""
    n, m = cost.shape
    problem = fota.make_problem(cost, s=float(min(n, m)), gamma=SUBMATCH_GAMMA,
                                max_iters=SUBMATCH_MAX_ITERS, tol=SUBMATCH_TOL)
    plan, assignment = fota.solve_with_plan(problem, min_mass=0.5)
    row_to_col = [UNMATCHED] * n
    # unit row mass leaves room for one column above 0.5; keep the larger if rounding yields two
    for j, i in enumerate(assignment.detection_to_track):
        if i == UNMATCHED:
            continue
        k = row_to_col[i]
        if k == UNMATCHED or plan.plan[i, j] > plan.plan[i, k]:
            row_to_col[i] = j
    return row_to_col


def match_queries(gts: Sequence[GroundTruthTrack], preds: Sequence[QueryPrediction],
                  w: LossWeights = LossWeights()) -> Matching:
    """Per prediction, the index of its ground truth or None for background."""
    prev_ids = [p.prev_track_id for p in preds if p.is_track_query]
    if len(prev_ids) != len(set(prev_ids)):
        raise ValueError("track queries must carry distinct previous track ids")
    gt_ids = [g.track_id for g in gts]
    if len(gt_ids) != len(set(gt_ids)):
        raise ValueError("ground-truth track ids must be unique")

    matching: list[Optional[int]] = [None] * len(preds)
    visible = {g.track_id: i for i, g in enumerate(gts) if g.visible_t}
    claimed: set[int] = set()
    for k, p in enumerate(preds):
        if p.is_track_query and p.prev_track_id in visible:
            matching[k] = visible[p.prev_track_id]
            claimed.add(visible[p.prev_track_id])

    rows = [i for i, g in enumerate(gts) if g.visible_t and i not in claimed]
    cols = [k for k, p in enumerate(preds) if not p.is_track_query]
    if rows and cols:
        C = np.array([[match_cost(gts[i], preds[k], w) for k in cols] for i in rows])
        for r, c in enumerate(_submatch(C)):
            if c != UNMATCHED:
                matching[cols[c]] = rows[r]
    return tuple(matching)


def set_prediction_loss(gts: Sequence[GroundTruthTrack], preds: Sequence[QueryPrediction],
                        matching: Matching, w: LossWeights = LossWeights()) -> float:
    if len(matching) != len(preds):
        raise ValueError("matching needs one entry per prediction")
    used = [g for g in matching if g is not None]
    if len(used) != len(set(used)):
        raise ValueError("a ground truth is matched to more than one prediction")
    if any(not 0 <= g < len(gts) for g in used):
        raise ValueError("matching refers to a ground truth that does not exist")
    total = 0.0
    for pred, g in zip(preds, matching):
        if g is None:
            total -= pred.class_probs[BACKGROUND_CLASS]
        else:
            total += match_cost(gts[g], pred, w)
    return total
