"""CLEAR-MOT, AMOTA/AMOTP and motion-error metrics on world-frame boxes.

Ground truth and hypotheses are matched per frame by BEV centre distance
(``match_dist`` metres, class-aware). Correspondences from the previous frame
are kept while still valid; the rest are found by Hungarian matching. Only
ground-truth objects seen by at least one camera count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import normalize_yaw
from .scenario import GTFrame, GTObject
from .tracker import FrameResult, TrackOutput

DEFAULT_MATCH_DIST = 2.0
DEFAULT_N_POINTS = 40
DEFAULT_MIN_RECALL = 0.1
MT_RATIO = 0.8
ML_RATIO = 0.2
TABLE_COLUMNS = ("AMOTA", "AMOTP", "MOTAR", "MOTA", "MOTP", "MT", "ML", "IDS", "FRAG", "FPS")

_BIG = 1e9


@dataclass(frozen=True)
class MetricReport:
    mota: float
    motp: float
    motar: float
    recall: float
    mt: int
    ml: int
    ids: int
    frag: int
    fp: int
    fn: int
    num_gt: int
    num_matches: int
    amota: Optional[float] = None
    amotp: Optional[float] = None
    per_class: dict[int, dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "amota": self.amota,
            "amotp": self.amotp,
            "motar": self.motar,
            "mota": self.mota,
            "motp": self.motp,
            "recall": self.recall,
            "mt": self.mt,
            "ml": self.ml,
            "ids": self.ids,
            "frag": self.frag,
            "fp": self.fp,
            "fn": self.fn,
            "num_gt": self.num_gt,
            "num_matches": self.num_matches,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }


@dataclass(frozen=True)
class _Counts:
    num_gt: int
    matches: int
    fp: int
    fn: int
    ids: int
    frag: int
    mt: int
    ml: int
    dist_sum: float
    pairs: tuple[tuple[GTObject, TrackOutput], ...]


def _frames_by_index(hyp: Iterable[FrameResult | Sequence[TrackOutput]], gt: Sequence[GTFrame]) -> list[tuple[TrackOutput, ...]]:
    """Align hypothesis outputs with the ground-truth frame list."""
    by_index: dict[int, tuple[TrackOutput, ...]] = {}
    for k, item in enumerate(hyp):
        if isinstance(item, FrameResult):
            by_index[item.frame_index] = item.outputs
        else:
            by_index[gt[k].frame_index if k < len(gt) else k] = tuple(item)
    known = {g.frame_index for g in gt}
    stray = sorted(set(by_index) - known)
    if stray:
        raise ValueError(f"hypothesis frames {stray[:5]} have no ground truth")
    return [by_index.get(g.frame_index, ()) for g in gt]


def _bev_dist(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _count(gt: Sequence[GTFrame], hyp_frames: Sequence[Sequence[TrackOutput]], match_dist: float,
           class_id: Optional[int] = None, min_score: Optional[float] = None) -> _Counts:
    prev_map: dict[int, int] = {}     # gt_id -> hyp id matched in the previous frame
    last_id: dict[int, int] = {}      # gt_id -> most recent hyp id ever matched
    was_tracked: dict[int, bool] = {}  # gt_id -> matched at its previous visible frame
    seen = {}                          # gt_id -> visible frame count
    tracked = {}                       # gt_id -> matched frame count
    num_gt = matches = fp = fn = ids = frag = 0
    dist_sum = 0.0
    pairs: list[tuple[GTObject, TrackOutput]] = []
    for gframe, outs in zip(gt, hyp_frames):
        objs = [o for o in gframe.objects if o.visible_cameras and (class_id is None or o.class_id == class_id)]
        hyps = [h for h in outs if (class_id is None or h.class_id == class_id)
                and (min_score is None or h.score >= min_score)]
        # id-independent order so relabelling hypotheses cannot change tie-breaks
        hyps.sort(key=lambda h: (h.class_id, h.box.center, -h.score, h.box.dims, h.box.yaw))
        num_gt += len(objs)
        hyp_pos = {h.track_id: k for k, h in enumerate(hyps)}
        D = np.full((len(objs), len(hyps)), _BIG)
        for i, o in enumerate(objs):
            for k, h in enumerate(hyps):
                if h.class_id == o.class_id:
                    d = _bev_dist(o.box.center, h.box.center)
                    if d <= match_dist:
                        D[i, k] = d
        match: dict[int, int] = {}  # gt row -> hyp col
        used: set[int] = set()
        for i, o in enumerate(objs):
            k = hyp_pos.get(prev_map.get(o.gt_id, -1))
            if k is not None and D[i, k] < _BIG and k not in used:
                match[i] = k
                used.add(k)
        free_rows = [i for i in range(len(objs)) if i not in match]
        free_cols = [k for k in range(len(hyps)) if k not in used]
        if free_rows and free_cols:
            sub = D[np.ix_(free_rows, free_cols)]
            rr, cc = linear_sum_assignment(sub)
            for r, c in zip(rr, cc):
                if sub[r, c] < _BIG:
                    match[free_rows[r]] = free_cols[c]
        new_map: dict[int, int] = {}
        for i, o in enumerate(objs):
            gid = o.gt_id
            seen[gid] = seen.get(gid, 0) + 1
            k = match.get(i)
            if k is None:
                fn += 1
                was_tracked[gid] = False
                continue
            h = hyps[k]
            matches += 1
            tracked[gid] = tracked.get(gid, 0) + 1
            dist_sum += D[i, k]
            pairs.append((o, h))
            if gid in last_id:
                if last_id[gid] != h.track_id:
                    ids += 1
                if not was_tracked.get(gid, False):
                    frag += 1
            last_id[gid] = h.track_id
            was_tracked[gid] = True
            new_map[gid] = h.track_id
        fp += len(hyps) - len(match)
        prev_map = new_map
    mt = sum(1 for g, n in seen.items() if tracked.get(g, 0) >= MT_RATIO * n)
    ml = sum(1 for g, n in seen.items() if tracked.get(g, 0) < ML_RATIO * n)
    return _Counts(num_gt, matches, fp, fn, ids, frag, mt, ml, dist_sum, tuple(pairs))


def _motar(c: _Counts) -> float:
    """Recall-normalised MOTA, 1 - (IDS + FP + FN - (1 - r) P) / (r P), clipped to [0, 1]."""
    if c.num_gt == 0 or c.matches == 0:
        return 0.0
    r = c.matches / c.num_gt
    val = 1.0 - (c.ids + c.fp + c.fn - (1.0 - r) * c.num_gt) / (r * c.num_gt)
    return min(max(val, 0.0), 1.0)


def _summary(c: _Counts) -> dict[str, Any]:
    denom = max(c.num_gt, 1)
    return {
        "mota": 1.0 - (c.fp + c.fn + c.ids) / denom,
        "motp": c.dist_sum / c.matches if c.matches else 0.0,
        "motar": _motar(c),
        "recall": c.matches / c.num_gt if c.num_gt else 0.0,
        "mt": c.mt,
        "ml": c.ml,
        "ids": c.ids,
        "frag": c.frag,
        "fp": c.fp,
        "fn": c.fn,
        "num_gt": c.num_gt,
        "num_matches": c.matches,
    }


def _classes(gt: Sequence[GTFrame]) -> list[int]:
    return sorted({o.class_id for f in gt for o in f.objects if o.visible_cameras})


def clear_mot(gt: Sequence[GTFrame], hyp: Iterable[FrameResult | Sequence[TrackOutput]],
              match_dist: float = DEFAULT_MATCH_DIST) -> MetricReport:
    """CLEAR-MOT counts at a single operating point (all hypotheses kept).

    MOTA = 1 - (FP + FN + IDS) / GT, with GT floored at 1 for empty ground truth.
    """
    frames = _frames_by_index(hyp, gt)
    total = _summary(_count(gt, frames, match_dist))
    per_class = {c: _summary(_count(gt, frames, match_dist, class_id=c)) for c in _classes(gt)}
    return MetricReport(**total, per_class=per_class)


def _amota_class(gt: Sequence[GTFrame], frames: Sequence[Sequence[TrackOutput]], match_dist: float,
                 n_points: int, min_recall: float, thresholds: Optional[Sequence[float]],
                 class_id: Optional[int]) -> tuple[float, float, float]:
    full = _count(gt, frames, match_dist, class_id)
    if full.num_gt == 0:
        return 0.0, match_dist, 0.0
    if thresholds is None:
        tp_scores = sorted((h.score for _, h in full.pairs), reverse=True)
        targets = np.linspace(min_recall, 1.0, n_points) if n_points > 1 else np.array([min_recall])
        thresholds_used: list[Optional[float]] = []
        for r in targets:
            k = int(math.ceil(r * full.num_gt - 1e-9))
            thresholds_used.append(tp_scores[k - 1] if 1 <= k <= len(tp_scores) else None)
    else:
        thresholds_used = list(thresholds)
    motars, motps = [], []
    cache: dict[float, _Counts] = {}
    for tau in thresholds_used:
        if tau is None:
            motars.append(0.0)
            motps.append(match_dist)
            continue
        if tau not in cache:
            cache[tau] = _count(gt, frames, match_dist, class_id, min_score=tau)
        c = cache[tau]
        motars.append(_motar(c))
        motps.append(c.dist_sum / c.matches if c.matches else match_dist)
    return float(np.mean(motars)), float(np.mean(motps)), motars[-1]


def amota_amotp(gt: Sequence[GTFrame], hyp: Iterable[FrameResult | Sequence[TrackOutput]],
                match_dist: float = DEFAULT_MATCH_DIST, n_points: int = DEFAULT_N_POINTS,
                min_recall: float = DEFAULT_MIN_RECALL,
                score_thresholds: Optional[Sequence[float]] = None) -> tuple[float, float, float]:
    """Accumulated MOTA/MOTP over a score sweep, averaged over classes.

    For each of ``n_points`` recall targets in [min_recall, 1] the score
    threshold is the k-th best true-positive score of the unthresholded run
    (k = ceil(target * GT)); metrics are recomputed with hypotheses scoring
    at least that. Unreachable targets contribute MOTAR 0 and MOTP
    ``match_dist``. ``score_thresholds`` replaces the sweep with explicit
    thresholds (one per point). Returns ``(amota, amotp, motar)``, where
    ``motar`` is taken at the last point.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if score_thresholds is not None and len(score_thresholds) != n_points:
        raise ValueError("score_thresholds needs one entry per point")
    frames = _frames_by_index(hyp, gt)
    classes = _classes(gt)
    if not classes:
        return 0.0, match_dist, 0.0
    vals = [_amota_class(gt, frames, match_dist, n_points, min_recall, score_thresholds, c) for c in classes]
    return tuple(float(np.mean([v[k] for v in vals])) for k in range(3))  # type: ignore[return-value]


def evaluate(gt: Sequence[GTFrame], hyp: Iterable[FrameResult | Sequence[TrackOutput]],
             match_dist: float = DEFAULT_MATCH_DIST, n_points: int = DEFAULT_N_POINTS) -> MetricReport:
    """Full report: CLEAR counts plus AMOTA/AMOTP."""
    frames = _frames_by_index(hyp, gt)
    report = clear_mot(gt, frames, match_dist)
    amota, amotp, _ = amota_amotp(gt, frames, match_dist, n_points)
    per_class = dict(report.per_class)
    for c in per_class:
        a, p, _ = _amota_class(gt, frames, match_dist, n_points, DEFAULT_MIN_RECALL, None, c)
        per_class[c] = {**per_class[c], "amota": a, "amotp": p}
    return MetricReport(**{**report.__dict__, "amota": amota, "amotp": amotp, "per_class": per_class})


def matched_pairs(gt: Sequence[GTFrame], hyp: Iterable[FrameResult | Sequence[TrackOutput]],
                  match_dist: float = DEFAULT_MATCH_DIST) -> list[tuple[GTObject, TrackOutput]]:
    return list(_count(gt, _frames_by_index(hyp, gt), match_dist).pairs)


def _aligned_iou(a_dims: Sequence[float], b_dims: Sequence[float]) -> float:
    inter = float(np.prod(np.minimum(a_dims, b_dims)))
    union = float(np.prod(a_dims)) + float(np.prod(b_dims)) - inter
    return inter / union


def motion_errors(pairs: Sequence[tuple[GTObject, TrackOutput]]) -> dict[str, float]:
    """Mean translation (BEV), scale (1 - aligned IoU), orientation and velocity errors."""
    if not pairs:
        return {"mATE": 0.0, "mASE": 0.0, "mAOE": 0.0, "mAVE": 0.0}
    ate, ase, aoe, ave = [], [], [], []
    for g, h in pairs:
        ate.append(_bev_dist(g.box.center, h.box.center))
        ase.append(1.0 - _aligned_iou(g.box.dims, h.box.dims))
        aoe.append(abs(normalize_yaw(h.box.yaw - g.box.yaw)))
        ave.append(math.hypot(h.velocity[0] - g.velocity[0], h.velocity[1] - g.velocity[1]))
    return {"mATE": float(np.mean(ate)), "mASE": float(np.mean(ase)),
            "mAOE": float(np.mean(aoe)), "mAVE": float(np.mean(ave))}


def _fmt(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.3f}"


def table_row(report: MetricReport, fps: Optional[float] = None) -> list[Any]:
    return [report.amota, report.amotp, report.motar, report.mota, report.motp,
            report.mt, report.ml, report.ids, report.frag, fps]


def format_table(rows: Sequence[tuple[Sequence[str], Sequence[Any]]], label_headers: Sequence[str] = ("Variant",)) -> str:
    """Aligned plain-text table; each row is (labels, values in TABLE_COLUMNS order).
    Values may be preformatted strings (e.g. ``mean ± std``)."""
    header = list(label_headers) + list(TABLE_COLUMNS)
    body = [[*labels, *(_fmt(v) for v in values)] for labels, values in rows]
    widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]
    nl = len(label_headers)

    def line(cells: Sequence[str]) -> str:
        parts = [c.ljust(w) if k < nl else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths))]
        return "  ".join(parts).rstrip()

    return "\n".join([line(header)] + [line(r) for r in body]) + "\n"
