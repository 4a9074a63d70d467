"""Rotated-box IoU, AP at 40 recall points, and depth-error statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import Box3D, rot_y

N_RECALL = 40
RECALL_LEVELS = np.arange(1, N_RECALL + 1) / N_RECALL


# -- polygons ---------------------------------------------------------------


def bev_polygon(box: Box3D) -> np.ndarray:
    """(4, 2) counter-clockwise footprint in the (x, z) ground plane."""
    signs = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    R = rot_y(box.yaw)
    half = np.array([box.dims.w, box.dims.l]) / 2.0
    # object x/z columns of RotY restricted to the camera x/z rows
    M = R[np.ix_([0, 2], [0, 2])] * half[None, :]
    poly = signs @ M.T + np.array([box.pose.center[0], box.pose.center[2]])
    if polygon_area_signed(poly) < 0:
        poly = poly[::-1]
    return poly


def polygon_area_signed(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(poly: np.ndarray) -> float:
    return abs(polygon_area_signed(poly)) if len(poly) >= 3 else 0.0


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` against convex CCW ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp, out = out, []
        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
    return np.array(out, dtype=float).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


@dataclass(frozen=True)
class Overlap:
    intersection: float
    area_a: float
    area_b: float
    degenerate: bool = False

    @property
    def iou(self) -> float:
        if self.degenerate:
            return 0.0
        union = self.area_a + self.area_b - self.intersection
        return float(min(max(self.intersection / union, 0.0), 1.0)) if union > 0 else 0.0


def bev_overlap(a: Box3D, b: Box3D) -> Overlap:
    pa, pb = bev_polygon(a), bev_polygon(b)
    area_a, area_b = polygon_area(pa), polygon_area(pb)
    if area_a <= 0 or area_b <= 0:
        return Overlap(0.0, area_a, area_b, degenerate=True)
    if a == b:
        return Overlap(area_a, area_a, area_b)
    return Overlap(polygon_area(clip_polygon(pa, pb)), area_a, area_b)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the yaw-rotated footprints in the X-Z ground plane."""
    return bev_overlap(a, b).iou


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    ya, yb = a.pose.center[1], b.pose.center[1]
    lo = max(ya - a.dims.h / 2.0, yb - b.dims.h / 2.0)
    hi = min(ya + a.dims.h / 2.0, yb + b.dims.h / 2.0)
    return max(hi - lo, 0.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Gravity-aligned 3D IoU: footprint intersection times vertical overlap."""
    ov = bev_overlap(a, b)
    if ov.degenerate:
        return 0.0
    inter = ov.intersection * vertical_overlap(a, b)
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


IOU_FUNCS = {"bev": bev_iou, "3d": iou_3d}


# -- average precision ------------------------------------------------------


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float
    class_id: int = 0

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInputError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class Match:
    det_index: int
    gt_index: int | None
    score: float
    iou: float


def match_detections(dets, gts, iou_thresh: float, iou_kind: str = "3d") -> list[Match]:
    """Greedy one-to-one matching in descending score order.

    Equal scores are ordered by the detection's distance to its nearest ground
    truth center, nearest first.
    """
    if iou_kind not in IOU_FUNCS:
        raise InvalidInputError(f"unknown IoU kind {iou_kind!r}")
    iou_fn = IOU_FUNCS[iou_kind]
    dets, gts = list(dets), list(gts)
    centers = np.array([g.center for g in gts]).reshape(-1, 3)

    def nearest(d: Detection) -> float:
        if not len(centers):
            return 0.0
        return float(np.min(np.linalg.norm(centers - d.box.center, axis=1)))

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, nearest(dets[i]), i))
    taken = [False] * len(gts)
    matches = []
    for i in order:
        best, best_iou = None, iou_thresh
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou_fn(dets[i].box, g)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            matches.append(Match(i, best, dets[i].score, best_iou))
        else:
            matches.append(Match(i, None, dets[i].score, 0.0))
    return matches


def ap_from_matches(matches: list[Match], n_gt: int) -> float:
    if n_gt == 0 or not matches:
        return 0.0
    tp = np.cumsum([m.gt_index is not None for m in matches])
    ranks = np.arange(1, len(matches) + 1)
    recall = tp / n_gt
    precision = tp / ranks
    interp = [precision[recall >= r - 1e-12].max(initial=0.0) for r in RECALL_LEVELS]
    # sequential sum then divide, the order the KITTI kit uses
    return float(sum(interp) / N_RECALL)


def ap_r40(dets, gts, iou_thresh: float, iou_kind: str = "3d") -> float:
    """Average precision sampled at recall levels 1/40, 2/40, ..., 1."""
    gts = list(gts)
    return ap_from_matches(match_detections(dets, gts, iou_thresh, iou_kind), len(gts))


# -- depth errors -------------------------------------------------------------


@dataclass(frozen=True)
class DepthErrorStats:
    n: int
    mean_abs: float
    median_abs: float
    p90_abs: float
    mean_signed: float
    median_signed: float
    p90_signed: float


def depth_error_stats(results) -> DepthErrorStats:
    """Summary of ``estimate - truth`` over (estimate, truth) pairs.

    Estimates may be floats or objects with a ``depth`` attribute.
    """
    pairs = list(results)
    if not pairs:
        raise InvalidInputError("depth_error_stats needs at least one result")
    err = np.array([getattr(est, "depth", est) - truth for est, truth in pairs], dtype=float)
    a = np.abs(err)
    return DepthErrorStats(
        n=len(err),
        mean_abs=float(a.mean()),
        median_abs=float(np.median(a)),
        p90_abs=float(np.percentile(a, 90)),
        mean_signed=float(err.mean()),
        median_signed=float(np.median(err)),
        p90_signed=float(np.percentile(err, 90)),
    )


# -- KITTI difficulty -----------------------------------------------------------

# (min 2D box height px, max occlusion level, max truncation) for easy / moderate / hard
KITTI_DIFFICULTY = ((40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50))


def kitti_difficulty(label) -> int:
    """0 easy, 1 moderate, 2 hard, -1 if outside every bucket."""
    height = label.bbox2d[3] - label.bbox2d[1]
    for level, (min_h, max_occ, max_trunc) in enumerate(KITTI_DIFFICULTY):
        if height >= min_h and label.occluded <= max_occ and label.truncated <= max_trunc:
            return level
    return -1


def filter_difficulty(labels, level: int) -> list:
    """Labels evaluated at ``level`` (cumulative, as in the KITTI kit)."""
    return [lb for lb in labels if 0 <= kitti_difficulty(lb) <= level]


# -- reports -------------------------------------------------------------------


@dataclass
class EvalReport:
    ap: dict = field(default_factory=dict)  # {class_id: {"3d@0.7": value, ...}}
    depth: dict = field(default_factory=dict)  # {variant: DepthErrorStats as dict}
    matches: list = field(default_factory=list)  # rows of the match table
    diagnostics: list = field(default_factory=list)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["section", "key", "metric", "value"])
            for cls in sorted(self.ap, key=str):
                for metric, v in sorted(self.ap[cls].items()):
                    w.writerow(["ap", cls, metric, repr(v)])
            for variant in sorted(self.depth):
                for metric, v in sorted(self.depth[variant].items()):
                    w.writerow(["depth", variant, metric, repr(v)])
