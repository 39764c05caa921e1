"""Oriented 3D box IoU, detection matching and threshold-based average precision.

AP here is recall at a threshold: the fraction of ground-truth instances
whose matched prediction satisfies the criterion. Category means skip
categories without ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose, rotation_error_deg, translation_error_m

SYMMETRIC_CATEGORIES = frozenset({"bottle", "bowl", "can"})

METRICS = ("IoU25", "IoU50", "IoU75", "10cm", "10deg", "10deg10cm")

IOU_GRID = np.round(np.arange(0, 101) * 0.01, 10)
ROTATION_GRID = np.arange(0, 61, dtype=float)
TRANSLATION_GRID = np.round(np.arange(0, 21) * 0.005, 10)

# Corner k has coordinates (+-1, +-1, +-1) / 2 with x, y, z signs from the
# table below; faces are listed counter-clockwise seen from outside.
_CORNER_SIGNS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)
_FACES = ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (3, 7, 6, 2), (0, 4, 7, 3), (1, 2, 6, 5))


@dataclass(frozen=True, eq=False)
class OrientedBox3D:
    """Box centred at ``pose.translation``, axes given by ``pose.rotation``.

    ``size`` holds full edge lengths in meters; ``pose.scale`` is ignored.
    """

    pose: Pose
    size: np.ndarray

    def __post_init__(self):
        size = np.array(self.size, dtype=float).reshape(3)
        if not (np.isfinite(size).all() and np.all(size > 0)):
            raise InvalidInputError(f"box size must be positive, got {size}")
        object.__setattr__(self, "size", size)

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def corners(self) -> np.ndarray:
        return (0.5 * _CORNER_SIGNS * self.size) @ self.pose.rotation.T + self.pose.translation

    def half_spaces(self) -> list[tuple[np.ndarray, float]]:
        """Outward normals ``n`` and offsets ``d`` with the box = {x : n.x <= d for all}."""
        out = []
        c = self.pose.translation
        for k in range(3):
            axis = self.pose.rotation[:, k]
            for sign in (1.0, -1.0):
                n = sign * axis
                out.append((n, float(n @ c + 0.5 * self.size[k])))
        return out

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points, dtype=float) - self.pose.translation) @ self.pose.rotation
        return np.all(np.abs(local) <= 0.5 * self.size, axis=-1)


@dataclass(frozen=True, eq=False)
class Detection:
    """One pose hypothesis (or ground-truth instance) for an object in a scene."""

    category: str
    box: OrientedBox3D
    pose: Pose
    scene: Hashable = None


def _box_faces(box: OrientedBox3D) -> list[np.ndarray]:
    corners = box.corners()
    return [corners[list(face)] for face in _FACES]


def _clip(faces: list[np.ndarray], normal: np.ndarray, offset: float, eps: float) -> list[np.ndarray]:
    """Clip a closed convex polyhedron (outward CCW faces) to ``normal.x <= offset``."""
    dists = [f @ normal - offset for f in faces]
    all_d = np.concatenate(dists)
    if np.all(all_d <= eps):
        return faces
    if np.all(all_d >= -eps):
        return []

    kept = []
    cap = []
    for poly, dist in zip(faces, dists):
        out = []
        k = len(poly)
        for i in range(k):
            p, q = poly[i], poly[(i + 1) % k]
            dp, dq = dist[i], dist[(i + 1) % k]
            if dp <= eps:
                out.append(p)
                if dp >= -eps:
                    cap.append(p)
            if (dp < -eps and dq > eps) or (dp > eps and dq < -eps):
                x = p + (q - p) * (dp / (dp - dq))
                out.append(x)
                cap.append(x)
        if len(out) >= 3:
            kept.append(np.array(out))

    if len(cap) >= 3:
        pts = _unique_points(np.array(cap), eps)
        if len(pts) >= 3:
            kept.append(_order_on_plane(pts, normal))
    return kept


def _unique_points(pts: np.ndarray, eps: float) -> np.ndarray:
    out = []
    for p in pts:
        if not any(np.abs(p - q).max() <= 10 * eps for q in out):
            out.append(p)
    return np.array(out)


def _order_on_plane(pts: np.ndarray, normal: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    ref = np.eye(3)[np.argmin(np.abs(normal))]
    e1 = np.cross(normal, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    rel = pts - centroid
    angles = np.arctan2(rel @ e2, rel @ e1)
    return pts[np.argsort(angles, kind="stable")]


def _polyhedron_volume(faces: list[np.ndarray], origin: np.ndarray) -> float:
    """Divergence theorem: sum of signed tetrahedra (origin, fan triangle)."""
    vol = 0.0
    for poly in faces:
        p = poly - origin
        a = p[0]
        b = p[1:-1]
        c = p[2:]
        vol += np.einsum("j,ij->", a, np.cross(b, c))
    return vol / 6.0


def intersection_volume(a: OrientedBox3D, b: OrientedBox3D) -> float:
    scale = float(max(a.size.max(), b.size.max(), np.abs(a.pose.translation).max(), np.abs(b.pose.translation).max()))
    eps = 1e-12 * max(scale, 1.0)
    faces = _box_faces(a)
    for normal, offset in b.half_spaces():
        faces = _clip(faces, normal, offset, eps)
        if not faces:
            return 0.0
    return max(_polyhedron_volume(faces, a.pose.translation), 0.0)


def iou3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact intersection-over-union of two oriented boxes."""
    inter = intersection_volume(a, b)
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def align_about_y(pred_rotation: np.ndarray, gt_rotation: np.ndarray) -> np.ndarray:
    """Rotate ``pred_rotation`` about its own y axis to be closest to ``gt_rotation``.

    Used for y-symmetric categories, whose rotation about y is unobservable.
    """
    q = pred_rotation.T @ gt_rotation
    theta = np.arctan2(q[0, 2] - q[2, 0], q[0, 0] + q[2, 2])
    c, s = np.cos(theta), np.sin(theta)
    ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return pred_rotation @ ry


def symmetric_iou(pred: Detection, gt: Detection, symmetric: bool) -> float:
    if not symmetric:
        return iou3d(pred.box, gt.box)
    rot = align_about_y(pred.box.pose.rotation, gt.box.pose.rotation)
    aligned = OrientedBox3D(Pose(rot, pred.box.pose.translation), pred.box.size)
    return iou3d(aligned, gt.box)


@dataclass
class Match:
    det: int
    gt: int
    iou: float
    rot_err: float
    trans_err: float


@dataclass
class Matching:
    """Greedy one-to-one pairing of detections with ground truth."""

    matches: list[Match]
    unmatched_dets: list[int]
    unmatched_gts: list[int]
    gt_categories: list[str]

    def gt_count(self, category: str) -> int:
        return sum(1 for c in self.gt_categories if c == category)

    @property
    def categories(self) -> list[str]:
        return sorted(set(self.gt_categories))


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Detection],
    symmetric_categories: Iterable[str] = SYMMETRIC_CATEGORIES,
) -> Matching:
    """Pair detections with ground truth greedily by descending 3D IoU.

    Candidates must share category and scene. Pairs with zero IoU remain
    eligible so pose errors are still measured for boxes that miss.
    """
    symmetric = set(symmetric_categories)
    candidates = []
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            if d.category != g.category or d.scene != g.scene:
                continue
            candidates.append((symmetric_iou(d, g, g.category in symmetric), i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    used_d, used_g = set(), set()
    matches = []
    for iou, i, j in candidates:
        if i in used_d or j in used_g:
            continue
        used_d.add(i)
        used_g.add(j)
        sym = gts[j].category in symmetric
        matches.append(
            Match(
                det=i,
                gt=j,
                iou=iou,
                rot_err=rotation_error_deg(dets[i].pose, gts[j].pose, sym),
                trans_err=translation_error_m(dets[i].pose, gts[j].pose),
            )
        )
    matches.sort(key=lambda m: m.gt)
    return Matching(
        matches=matches,
        unmatched_dets=[i for i in range(len(dets)) if i not in used_d],
        unmatched_gts=[j for j in range(len(gts)) if j not in used_g],
        gt_categories=[g.category for g in gts],
    )


def _passes(m: Match, metric: str) -> bool:
    if metric == "IoU25":
        return m.iou > 0.25
    if metric == "IoU50":
        return m.iou > 0.5
    if metric == "IoU75":
        return m.iou > 0.75
    if metric == "10cm":
        return m.trans_err < 0.10
    if metric == "10deg":
        return m.rot_err < 10.0
    if metric == "10deg10cm":
        return m.rot_err < 10.0 and m.trans_err < 0.10
    raise InvalidInputError(f"unknown metric {metric!r}")


def ap_at(matching: Matching, metric: str, category: str | None = None) -> float | None:
    """AP for one criterion; ``None`` when there is no ground truth to score."""
    cats = matching.gt_categories
    n_gt = len(cats) if category is None else matching.gt_count(category)
    if n_gt == 0:
        return None
    hits = sum(1 for m in matching.matches if (category is None or cats[m.gt] == category) and _passes(m, metric))
    return hits / n_gt


@dataclass
class Curve:
    thresholds: np.ndarray
    per_category: dict[str, np.ndarray]
    mean: np.ndarray


@dataclass
class EvalReport:
    ap: dict[str, dict[str, float | None]]
    mean: dict[str, float | None]
    curves: dict[str, Curve] = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        records = []
        for cat in sorted(self.ap):
            for metric in METRICS:
                records.append({"category": cat, "metric": metric, "ap": self.ap[cat][metric]})
        for metric in METRICS:
            records.append({"category": "mean", "metric": metric, "ap": self.mean[metric]})
        return records


def ap_curves(matching: Matching, grids: dict[str, np.ndarray] | None = None) -> dict[str, Curve]:
    """AP as a function of the IoU, rotation (deg) and translation (m) thresholds."""
    grids = grids or {"iou": IOU_GRID, "rotation": ROTATION_GRID, "translation": TRANSLATION_GRID}
    cats = matching.gt_categories
    out = {}
    for kind, grid in grids.items():
        grid = np.asarray(grid, dtype=float)
        per_cat = {}
        for cat in matching.categories:
            n_gt = matching.gt_count(cat)
            vals = np.array(
                [
                    {"iou": m.iou, "rotation": m.rot_err, "translation": m.trans_err}[kind]
                    for m in matching.matches
                    if cats[m.gt] == cat
                ]
            )
            if kind == "iou":
                hits = (vals[None, :] > grid[:, None]).sum(axis=1) if len(vals) else np.zeros(len(grid))
            else:
                hits = (vals[None, :] < grid[:, None]).sum(axis=1) if len(vals) else np.zeros(len(grid))
            per_cat[cat] = hits / n_gt
        mean = np.mean(list(per_cat.values()), axis=0) if per_cat else np.zeros(len(grid))
        out[kind] = Curve(grid, per_cat, mean)
    return out


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[Detection],
    symmetric_categories: Iterable[str] = SYMMETRIC_CATEGORIES,
    with_curves: bool = True,
) -> EvalReport:
    matching = match_detections(dets, gts, symmetric_categories)
    ap = {cat: {metric: ap_at(matching, metric, cat) for metric in METRICS} for cat in matching.categories}
    mean = {}
    for metric in METRICS:
        vals = [ap[c][metric] for c in ap if ap[c][metric] is not None]
        mean[metric] = float(np.mean(vals)) if vals else None
    curves = ap_curves(matching) if with_curves else {}
    return EvalReport(ap=ap, mean=mean, curves=curves)


def write_report(report: EvalReport, path) -> None:
    """One JSON record per (category, metric) line."""
    with open(path, "w") as fh:
        for rec in report.to_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_report(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_curves(curve: Curve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "category", "ap"])
        for cat in sorted(curve.per_category):
            for thr, ap in zip(curve.thresholds, curve.per_category[cat]):
                writer.writerow([repr(float(thr)), cat, repr(float(ap))])
        for thr, ap in zip(curve.thresholds, curve.mean):
            writer.writerow([repr(float(thr)), "mean", repr(float(ap))])
