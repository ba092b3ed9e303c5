"""Perception stage: geofence crop, BEV rasterization, detection, evaluation.

The reference detector is purely geometric (ground removal, radius
clustering, minimum-area rectangle fit); learned detectors can be swapped
in behind the same ``detect``-shaped interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import OrientedBox, clip_polygon, normalize_yaw_mod_pi, polygon_area
from .lidar import PointCloudFrame
from .scenario import AgentClass, LabeledBox


@dataclass(frozen=True)
class Geofence:
    """Axis-aligned crop region in the sensor frame; intervals are closed."""

    x_range: tuple = (0.0, 50.0)
    y_range: tuple = (-25.0, 25.0)
    z_range: tuple = (-2.74, 1.36)

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy min < max")

    def contains_point(self, x: float, y: float, z: float) -> bool:
        return (
            self.x_range[0] <= x <= self.x_range[1]
            and self.y_range[0] <= y <= self.y_range[1]
            and self.z_range[0] <= z <= self.z_range[1]
        )

    def mask(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points)
        return (
            (p[:, 0] >= self.x_range[0])
            & (p[:, 0] <= self.x_range[1])
            & (p[:, 1] >= self.y_range[0])
            & (p[:, 1] <= self.y_range[1])
            & (p[:, 2] >= self.z_range[0])
            & (p[:, 2] <= self.z_range[1])
        )


def geofence(frame: PointCloudFrame, g: Geofence) -> PointCloudFrame:
    """Retain exactly the points inside the region, preserving order."""
    if len(frame) == 0:
        return frame
    return PointCloudFrame(tick=frame.tick, sensor=frame.sensor, points=frame.points[g.mask(frame.points)])


@dataclass(frozen=True)
class BevConfig:
    """Grid over the forward region x in [0, range_x], y in +-range_y/2."""

    width: int = 608
    height: int = 608
    range_x: float = 50.0
    range_y: float = 50.0
    z_range: tuple = (-2.74, 1.36)
    raw_log_density: bool = False  # divide log(N+1) by 64 instead of log(64)

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.range_x <= 0 or self.range_y <= 0:
            raise ValueError("grid dimensions and ranges must be positive")


@dataclass(frozen=True)
class BevMap:
    config: BevConfig
    cells: np.ndarray  # (height, width, 3) in [0, 1]

    def to_rgb8(self) -> np.ndarray:
        return np.rint(self.cells * 255.0).astype(np.uint8)

    def save_png(self, path) -> None:
        from PIL import Image

        Image.fromarray(self.to_rgb8(), mode="RGB").save(path)


def normalize_point(x: float, y: float, cfg: BevConfig):
    """Map sensor-frame (x, y) onto fractional grid coordinates.

    The x axis scales by height/range_x and y by height/range_y with a
    half-width shift, so the region corner maps to (0, 0) and its center to
    the grid center. No clamping happens here; binning clamps the max edge
    into the last cell.
    """
    return x * cfg.height / cfg.range_x, y * cfg.height / cfg.range_y + 0.5 * cfg.width


def build_bev(frame: PointCloudFrame, cfg: BevConfig = BevConfig()) -> BevMap:
    """Rasterize a geofenced frame into density/height/intensity channels.

    Per occupied cell: density = min(1, log(N+1)/log 64) (or the raw /64
    variant), height = max z min-max scaled over the configured z range,
    intensity = max point intensity. Empty cells stay (0, 0, 0).
    """
    cells = np.zeros((cfg.height, cfg.width, 3))
    pts = frame.points
    if len(pts) == 0:
        return BevMap(config=cfg, cells=cells)

    xn, yn = normalize_point(pts[:, 0], pts[:, 1], cfg)
    ix = np.clip(np.floor(xn).astype(int), 0, cfg.height - 1)
    iy = np.clip(np.floor(yn).astype(int), 0, cfg.width - 1)
    flat = ix * cfg.width + iy

    counts = np.bincount(flat, minlength=cfg.height * cfg.width).astype(float)
    denom = 64.0 if cfg.raw_log_density else math.log(64.0)
    density = np.minimum(1.0, np.log(counts + 1.0) / denom)

    z_lo, z_hi = cfg.z_range
    max_z = np.full(cfg.height * cfg.width, -np.inf)
    np.maximum.at(max_z, flat, pts[:, 2])
    height = np.clip((max_z - z_lo) / (z_hi - z_lo), 0.0, 1.0)
    height[~np.isfinite(max_z)] = 0.0

    max_i = np.zeros(cfg.height * cfg.width)
    np.maximum.at(max_i, flat, pts[:, 3])

    cells[:, :, 0] = density.reshape(cfg.height, cfg.width)
    cells[:, :, 1] = height.reshape(cfg.height, cfg.width)
    cells[:, :, 2] = max_i.reshape(cfg.height, cfg.width)
    return BevMap(config=cfg, cells=cells)


@dataclass(frozen=True)
class DetectorParams:
    """Thresholds of the geometric reference detector."""

    ground_z: float = -1.73  # sensor-frame z of the road plane
    eps_ground: float = 0.15
    cluster_radius: float = 0.7
    min_points: int = 12
    area_split: float = 1.0  # footprint area below which a tall cluster is a pedestrian
    height_split: float = 1.0
    reference_count: int = 100  # cluster size at which confidence saturates


@dataclass(frozen=True)
class Detection:
    cls: AgentClass
    box: OrientedBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns CCW hull vertices, shape (M, 2)."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points: np.ndarray, min_side: float = 0.1) -> OrientedBox:
    """Minimum-area enclosing rectangle via rotating calipers over hull edges.

    Degenerate (collinear) inputs are widened to ``min_side`` so the result
    is always a valid box. Yaw is reported modulo pi in [0, pi).
    """
    hull = convex_hull(points)
    if len(hull) == 1:
        x, y = hull[0]
        return OrientedBox(float(x), float(y), min_side, min_side, 0.0)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        c = 0.5 * (hull[0] + hull[1])
        return OrientedBox(
            float(c[0]), float(c[1]), max(float(np.hypot(*d)), min_side), min_side,
            normalize_yaw_mod_pi(math.atan2(d[1], d[0])),
        )

    best = None
    n = len(hull)
    for i in range(n):
        edge = hull[(i + 1) % n] - hull[i]
        norm = math.hypot(edge[0], edge[1])
        u = edge / norm
        v = np.array([-u[1], u[0]])
        proj_u = hull @ u
        proj_v = hull @ v
        du = proj_u.max() - proj_u.min()
        dv = proj_v.max() - proj_v.min()
        area = du * dv
        if best is None or area < best[0]:
            cu = 0.5 * (proj_u.max() + proj_u.min())
            cv = 0.5 * (proj_v.max() + proj_v.min())
            best = (area, cu * u + cv * v, du, dv, u, v)

    _, center, du, dv, u, v = best
    if du >= dv:
        length, width, axis = du, dv, u
    else:
        length, width, axis = dv, du, v
    return OrientedBox(
        float(center[0]),
        float(center[1]),
        max(float(length), min_side),
        max(float(width), min_side),
        normalize_yaw_mod_pi(math.atan2(axis[1], axis[0])),
    )


def _cluster_labels(xy: np.ndarray, radius: float) -> np.ndarray:
    """Fixed-radius connected components over xy-projected points."""
    pairs = cKDTree(xy).query_pairs(radius, output_type="ndarray")
    n = len(xy)
    if len(pairs) == 0:
        return np.arange(n)
    graph = sparse.coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    return labels


def detect(frame: PointCloudFrame, params: DetectorParams = DetectorParams()) -> list:
    """Geometric reference detector on a geofenced frame.

    Removes near-ground points, clusters the rest by xy radius, fits each
    sufficiently large cluster with a minimum-area rotated rectangle, and
    splits classes on footprint area vs. cluster height. Confidence grows
    with cluster size and saturates at ``reference_count`` points.
    """
    pts = frame.points
    if len(pts) == 0:
        return []
    keep = pts[:, 2] > params.ground_z + params.eps_ground
    pts = pts[keep]
    if len(pts) == 0:
        return []

    labels = _cluster_labels(pts[:, :2], params.cluster_radius)
    detections = []
    for lab in np.unique(labels):
        cluster = pts[labels == lab]
        if len(cluster) < params.min_points:
            continue
        box = min_area_rect(cluster[:, :2])
        height_above_ground = float(cluster[:, 2].max()) - params.ground_z
        if box.area <= params.area_split and height_above_ground >= params.height_split:
            cls = AgentClass.PEDESTRIAN
        else:
            cls = AgentClass.CAR
        confidence = min(1.0, len(cluster) / params.reference_count)
        detections.append(Detection(cls=cls, box=box, confidence=confidence))
    detections.sort(key=lambda d: (-d.confidence, d.box.cx, d.box.cy))
    return detections


def oriented_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of two rotated rectangles via polygon clipping."""
    if a.area <= 0.0 or b.area <= 0.0:
        raise ValueError("degenerate box")
    inter_poly = clip_polygon(a.corners(), b.corners())
    if len(inter_poly) < 3:
        return 0.0
    inter = abs(polygon_area(inter_poly))
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; zero when both vanish."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    ap: float
    f1: float
    tp: int
    fp: int
    n_gt: int


@dataclass(frozen=True)
class EvalReport:
    iou_threshold: float
    per_class: dict  # class name -> ClassMetrics
    overall: ClassMetrics

    def to_table(self) -> str:
        rows = [f"{'Class':<12} {'Precision':>9} {'Recall':>9} {'AP':>9} {'F1':>9}"]
        entries = list(self.per_class.items()) + [("Overall", self.overall)]
        for name, m in entries:
            rows.append(
                f"{name:<12} {100 * m.precision:>8.2f}% {100 * m.recall:>8.2f}% "
                f"{100 * m.ap:>8.2f}% {100 * m.f1:>8.2f}%"
            )
        return "\n".join(rows)

    def to_csv(self) -> str:
        lines = ["class,precision,recall,ap,f1,tp,fp,n_gt"]
        entries = list(self.per_class.items()) + [("Overall", self.overall)]
        for name, m in entries:
            lines.append(
                f"{name},{m.precision:.6f},{m.recall:.6f},{m.ap:.6f},{m.f1:.6f},"
                f"{m.tp},{m.fp},{m.n_gt}"
            )
        return "\n".join(lines) + "\n"


def _label_box(gt: LabeledBox) -> OrientedBox:
    return OrientedBox(gt.center[0], gt.center[1], gt.dims[0], gt.dims[1], gt.yaw)


def _match_frame(dets: Sequence[Detection], gts: Sequence[LabeledBox], thr: float):
    """Greedy confidence-ordered matching; yaw compared modulo pi.

    Returns (det, tp_flag) pairs in descending-confidence order.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    taken = [False] * len(gts)
    results = []
    for i in order:
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.cls is not det.cls:
                continue
            iou = oriented_iou(det.box, _label_box(gt))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= thr:
            taken[best_j] = True
            results.append((det, True))
        else:
            results.append((det, False))
    return results


def evaluate_frames(frames: Sequence[tuple], iou_thr: float) -> EvalReport:
    """Evaluate (detections, ground_truths) pairs pooled over frames."""
    scored: dict = {}
    n_gt: dict = {}
    for dets, gts in frames:
        for gt in gts:
            n_gt[gt.cls] = n_gt.get(gt.cls, 0) + 1
        for det, tp in _match_frame(dets, gts, iou_thr):
            scored.setdefault(det.cls, []).append((det.confidence, tp))

    per_class = {}
    classes = sorted(set(scored) | set(n_gt), key=lambda c: c.value)
    for cls in classes:
        entries = sorted(scored.get(cls, []), key=lambda e: -e[0])
        flags = [tp for _, tp in entries]
        per_class[cls.value] = _metrics_from_flags(flags, n_gt.get(cls, 0))

    all_flags = [tp for entries in scored.values() for _, tp in sorted(entries, key=lambda e: -e[0])]
    # micro aggregate: rank every detection together regardless of class
    pooled = sorted(
        ((conf, tp) for entries in scored.values() for conf, tp in entries), key=lambda e: -e[0]
    )
    overall = _metrics_from_flags([tp for _, tp in pooled], sum(n_gt.values()))
    return EvalReport(iou_threshold=iou_thr, per_class=per_class, overall=overall)


def evaluate(dets: Sequence[Detection], gts: Sequence[LabeledBox], iou_thr: float = 0.5) -> EvalReport:
    """Single-pool evaluation of one frame (or one pre-pooled set)."""
    return evaluate_frames([(dets, gts)], iou_thr)


def _metrics_from_flags(flags: Sequence[bool], n_gt: int) -> ClassMetrics:
    tp = int(sum(flags))
    fp = len(flags) - tp
    precision = tp / len(flags) if flags else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return ClassMetrics(
        precision=precision,
        recall=recall,
        ap=_average_precision(flags, n_gt),
        f1=f1_score(precision, recall),
        tp=tp,
        fp=fp,
        n_gt=n_gt,
    )


def _average_precision(flags: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP over the confidence-ranked TP/FP sequence."""
    if n_gt == 0 or not flags:
        return 0.0
    tps = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    precisions = tps / ranks
    recalls = tps / n_gt
    # precision envelope from the right
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for p, r, tp_flag in zip(envelope, recalls, flags):
        if tp_flag:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)
