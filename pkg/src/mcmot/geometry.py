"""BEV / 3D box overlap and the association distances (GIoU, Mahalanobis).

Polygons are plain lists of ``(x, y)`` tuples. Everything here is pure and
small enough that per-pair python is faster than numpy dispatch overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .model import Box3D, normalize_yaw

Point = tuple[float, float]

_EPS = 1e-12


class DegenerateBoxError(ValueError):
    """A box footprint or volume has zero measure."""


class FilterDivergenceError(ValueError):
    """Innovation covariance is not symmetric positive definite."""


def signed_area(vertices: Sequence[Point]) -> float:
    n = len(vertices)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * acc


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = _dedupe(tuple((float(x), float(y)) for x, y in self.vertices))
        if len(verts) >= 3 and signed_area(verts) < 0.0:
            verts = tuple(reversed(verts))
        object.__setattr__(self, "vertices", verts)

    @property
    def area(self) -> float:
        return abs(signed_area(self.vertices))

    @property
    def is_degenerate(self) -> bool:
        return len(self.vertices) < 3 or self.area <= _EPS


def _dedupe(verts: tuple[Point, ...]) -> tuple[Point, ...]:
    out: list[Point] = []
    for v in verts:
        if not out or abs(v[0] - out[-1][0]) > _EPS or abs(v[1] - out[-1][1]) > _EPS:
            out.append(v)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= _EPS and abs(out[0][1] - out[-1][1]) <= _EPS:
        out.pop()
    return tuple(out)


def _footprint_points(box: Box3D) -> list[Point]:
    # front-left first, then counterclockwise
    cx, cy = box.center[0], box.center[1]
    hl, hw = 0.5 * box.dims[0], 0.5 * box.dims[1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return [(cx + c * lx - s * ly, cy + s * lx + c * ly) for lx, ly in local]


def bev_footprint(box: Box3D) -> ConvexPolygon:
    return ConvexPolygon(tuple(_footprint_points(box)))


def box_corners(box: Box3D) -> np.ndarray:
    """8x3 corners: the four bottom corners (BEV order) then the four top ones."""
    pts = _footprint_points(box)
    z0 = box.center[2] - 0.5 * box.dims[2]
    z1 = box.center[2] + 0.5 * box.dims[2]
    return np.array([(x, y, z0) for x, y in pts] + [(x, y, z1) for x, y in pts])


def _clip(subject: list[Point], clipper: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman clipping of ``subject`` by a CCW convex ``clipper``."""
    output = subject
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        m = len(inp)
        for k in range(m):
            px, py = inp[k - 1]
            qx, qy = inp[k]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sq >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sq)
                    output.append((px + t * (qx - px), py + t * (qy - py)))
                output.append((qx, qy))
            elif sp >= 0.0:
                t = sp / (sp - sq)
                output.append((px + t * (qx - px), py + t * (qy - py)))
    return output


def polygon_intersection_area(a: ConvexPolygon, b: ConvexPolygon) -> float:
    if a.is_degenerate or b.is_degenerate:
        return 0.0
    clipped = _clip(list(a.vertices), b.vertices)
    area = abs(signed_area(clipped))
    return min(area, a.area, b.area)


def convex_hull(points: Iterable[Sequence[float]]) -> ConvexPolygon:
    """Monotone-chain hull; collinear input gives a degenerate (zero-area) polygon."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if not pts:
        raise ValueError("convex_hull needs at least one point")
    if len(pts) <= 2:
        return ConvexPolygon(tuple(pts))

    def cross(o: Point, a: Point, b: Point) -> float:
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    return ConvexPolygon(tuple(lower[:-1] + upper[:-1]))


def _hull_area(points: list[Point]) -> float:
    pts = sorted(points)

    def cross(o: Point, a: Point, b: Point) -> float:
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0.0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0.0:
            upper.pop()
        upper.append(p)
    return abs(signed_area(lower[:-1] + upper[:-1]))


def _bev_terms(a: Box3D, b: Box3D) -> tuple[float, float, float, float]:
    # hot path of the GIoU cost matrix: raw point lists, no polygon objects
    area_a = a.dims[0] * a.dims[1]
    area_b = b.dims[0] * b.dims[1]
    if area_a <= _EPS or area_b <= _EPS:
        raise DegenerateBoxError("zero-area box footprint")
    pa, pb = _footprint_points(a), _footprint_points(b)
    inter = min(abs(signed_area(_clip(pa, pb))), area_a, area_b)
    hull = _hull_area(pa + pb)
    return area_a, area_b, inter, hull


def _giou_distance(inter: float, union: float, hull: float) -> float:
    iou = inter / union
    d = 1.0 - (iou - (hull - union) / hull)
    return min(max(d, 0.0), 2.0)


def d_giou_2d(a: Box3D, b: Box3D) -> float:
    """1 - GIoU of the two BEV footprints; 0 for identical boxes, -> 2 far apart."""
    area_a, area_b, inter, hull = _bev_terms(a, b)
    union = area_a + area_b - inter
    return _giou_distance(inter, union, max(hull, union))


def d_giou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric variant: oriented BEV overlap extruded by the vertical overlap;
    enclosing volume is BEV hull area times the joint vertical span."""
    area_a, area_b, inter_bev, hull_bev = _bev_terms(a, b)
    za0, za1 = a.center[2] - 0.5 * a.dims[2], a.center[2] + 0.5 * a.dims[2]
    zb0, zb1 = b.center[2] - 0.5 * b.dims[2], b.center[2] + 0.5 * b.dims[2]
    z_overlap = max(0.0, min(za1, zb1) - max(za0, zb0))
    z_span = max(za1, zb1) - min(za0, zb0)
    vol_a = area_a * a.dims[2]
    vol_b = area_b * b.dims[2]
    inter = inter_bev * z_overlap
    union = vol_a + vol_b - inter
    hull = hull_bev * z_span
    return _giou_distance(inter, union, max(hull, union))


def giou_lower_bound(a: Box3D, b: Box3D, volumetric: bool = False) -> float:
    """Cheap lower bound on d_giou, used to skip exact evaluation for far pairs.

    The enclosing hull contains the trapezoid spanned by the inscribed discs of
    both footprints, so hull >= D * (r_a + r_b) with D the centre distance.
    """
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    dist = math.hypot(dx, dy)
    # only valid once the footprints are certainly disjoint (IoU = 0)
    if dist <= 0.5 * (math.hypot(a.dims[0], a.dims[1]) + math.hypot(b.dims[0], b.dims[1])):
        return 0.0
    r = 0.5 * (min(a.dims[0], a.dims[1]) + min(b.dims[0], b.dims[1]))
    area_a = a.dims[0] * a.dims[1]
    area_b = b.dims[0] * b.dims[1]
    hull = max(dist * r, max(area_a, area_b))
    union_max = area_a + area_b
    if volumetric:
        za0, za1 = a.center[2] - 0.5 * a.dims[2], a.center[2] + 0.5 * a.dims[2]
        zb0, zb1 = b.center[2] - 0.5 * b.dims[2], b.center[2] + 0.5 * b.dims[2]
        hull *= max(za1, zb1) - min(za0, zb0)
        union_max = area_a * a.dims[2] + area_b * b.dims[2]
    if hull <= union_max:
        return 0.0
    # disjoint: d = 2 - union/hull, with union <= union_max
    return max(0.0, 2.0 - union_max / hull)


def giou_lower_bound_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D], volumetric: bool = False) -> np.ndarray:
    """:func:`giou_lower_bound` for every pair, vectorised."""
    A = np.array([(*b.center, *b.dims) for b in boxes_a], dtype=float).reshape(-1, 6)
    B = np.array([(*b.center, *b.dims) for b in boxes_b], dtype=float).reshape(-1, 6)
    dist = np.hypot(A[:, None, 0] - B[None, :, 0], A[:, None, 1] - B[None, :, 1])
    half_diag = 0.5 * (np.hypot(A[:, 3], A[:, 4])[:, None] + np.hypot(B[:, 3], B[:, 4])[None, :])
    r = 0.5 * (np.minimum(A[:, 3], A[:, 4])[:, None] + np.minimum(B[:, 3], B[:, 4])[None, :])
    area_a = (A[:, 3] * A[:, 4])[:, None]
    area_b = (B[:, 3] * B[:, 4])[None, :]
    hull = np.maximum(dist * r, np.maximum(area_a, area_b))
    union_max = area_a + area_b
    if volumetric:
        top = np.maximum((A[:, 2] + 0.5 * A[:, 5])[:, None], (B[:, 2] + 0.5 * B[:, 5])[None, :])
        bottom = np.minimum((A[:, 2] - 0.5 * A[:, 5])[:, None], (B[:, 2] - 0.5 * B[:, 5])[None, :])
        hull = hull * (top - bottom)
        union_max = area_a * A[:, 5][:, None] + area_b * B[:, 5][None, :]
    bound = np.maximum(0.0, 2.0 - union_max / hull)
    bound[(dist <= half_diag) | (hull <= union_max)] = 0.0
    return bound


def measurement_residual(detection_vec: Sequence[float], predicted_mean: Sequence[float]) -> np.ndarray:
    r = np.asarray(detection_vec, dtype=float) - np.asarray(predicted_mean, dtype=float)
    if r.shape[0] == 7:
        r[3] = normalize_yaw(r[3])
    return r


def d_mahalanobis(predicted_mean: Sequence[float], innovation_cov: np.ndarray, detection_vec: Sequence[float]) -> float:
    """sqrt(r^T S^-1 r) with r = detection - prediction.

    For the 7-d box measurement the yaw component of r is wrapped to [-pi, pi).
    """
    r = measurement_residual(detection_vec, predicted_mean)
    S = np.asarray(innovation_cov, dtype=float)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FilterDivergenceError("innovation covariance is not positive definite") from exc
    y = solve_triangular(L, r, lower=True, check_finite=False)
    return float(math.sqrt(float(y @ y)))


def mahalanobis_many(predicted_mean: np.ndarray, innovation_cov: np.ndarray, detection_vecs: np.ndarray) -> np.ndarray:
    """Vectorised d_mahalanobis of one prediction against rows of ``detection_vecs``."""
    R = np.asarray(detection_vecs, dtype=float) - np.asarray(predicted_mean, dtype=float)
    if R.ndim == 1:
        R = R[None, :]
    if R.shape[1] == 7:
        R[:, 3] = np.mod(R[:, 3] + math.pi, 2.0 * math.pi) - math.pi
    try:
        L = np.linalg.cholesky(np.asarray(innovation_cov, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise FilterDivergenceError("innovation covariance is not positive definite") from exc
    Y = solve_triangular(L, R.T, lower=True, check_finite=False)
    return np.sqrt(np.sum(Y * Y, axis=0))
