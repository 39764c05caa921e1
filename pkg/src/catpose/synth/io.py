"""Line-oriented JSON files for datasets and predictions, plus ASCII PLY export.

Floats are written with ``repr`` precision so a write/read round trip is
exact, and keys are sorted so identical data gives identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import InvalidInputError, ParseError
from ..evaluation import Detection, OrientedBox3D
from ..geometry import BBox2D, CameraIntrinsics, DepthPatch, Pose
from .scene import CategoryInfo, Dataset, SceneInstance

DATASET_KIND = "catpose-dataset"
PREDICTION_KIND = "catpose-predictions"
FORMAT_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def pose_to_dict(pose: Pose) -> dict:
    return {
        "rotation": [float(x) for x in pose.rotation.ravel()],
        "translation": [float(x) for x in pose.translation],
        "scale": float(pose.scale),
    }


def pose_from_dict(d: dict) -> Pose:
    rot = np.array(d["rotation"], dtype=float)
    trans = np.array(d["translation"], dtype=float)
    if rot.shape != (9,) or trans.shape != (3,):
        raise ValueError("pose needs 9 rotation values and 3 translation values")
    return Pose(rot.reshape(3, 3), trans, float(d["scale"]))


def _rows(a: np.ndarray) -> list[list[float]]:
    return [[float(x) for x in row] for row in np.asarray(a)]


def _points(values, width: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"{name} must be a list of {width}-vectors")
    return arr


def instance_to_dict(inst: SceneInstance) -> dict:
    intr = inst.intrinsics
    pix = np.column_stack([inst.depth_patch.pixels, inst.depth_patch.depths])
    return {
        "id": inst.id,
        "category": inst.category,
        "pose": pose_to_dict(inst.gt_pose),
        "size": [float(x) for x in inst.gt_size],
        "intrinsics": {k: float(getattr(intr, k)) for k in ("fx", "fy", "cx", "cy")},
        "bbox": {k: float(getattr(inst.bbox, k)) for k in "ltrb"},
        "pixels": _rows(pix),
        "nocs": _rows(inst.gt_nocs),
        "model": _rows(inst.model),
    }


def instance_from_dict(d: dict) -> SceneInstance:
    pix = _points(d["pixels"], 3, "pixels")
    nocs = _points(d["nocs"], 3, "nocs")
    if len(nocs) != len(pix):
        raise ValueError(f"{len(pix)} pixels but {len(nocs)} NOCS points")
    size = np.array(d["size"], dtype=float)
    if size.shape != (3,):
        raise ValueError("size must have 3 entries")
    return SceneInstance(
        id=int(d["id"]),
        category=str(d["category"]),
        gt_pose=pose_from_dict(d["pose"]),
        gt_nocs=nocs,
        depth_patch=DepthPatch(pix[:, :2], pix[:, 2]),
        bbox=BBox2D(**{k: float(d["bbox"][k]) for k in "ltrb"}),
        intrinsics=CameraIntrinsics(**{k: float(d["intrinsics"][k]) for k in ("fx", "fy", "cx", "cy")}),
        gt_size=size,
        model=_points(d["model"], 3, "model"),
    )


def dataset_to_lines(ds: Dataset) -> Iterable[str]:
    header = {
        "kind": DATASET_KIND,
        "version": FORMAT_VERSION,
        "seed": ds.seed,
        "n_pixels": ds.n_pixels,
        "n_prior": ds.n_prior,
        "categories": [
            {"name": c.name, "generator": c.generator, "symmetric_about_y": c.symmetric_about_y, "size_range": list(c.size_range)}
            for c in ds.categories.values()
        ],
        "priors": {name: _rows(p) for name, p in ds.priors.items()},
        "count": len(ds.instances),
    }
    yield _dumps(header)
    for inst in ds.instances:
        yield _dumps(instance_to_dict(inst))


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        for line in dataset_to_lines(ds):
            fh.write(line + "\n")


def _parse_lines(path, kind: str):
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, expected a {kind} header", line=1)
    records = []
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=no) from None
        if not isinstance(rec, dict):
            raise ParseError(f"{path}: expected a JSON object", line=no)
        records.append((no, rec))
    no, header = records[0]
    if header.get("kind") != kind:
        raise ParseError(f"{path}: expected header kind {kind!r}, got {header.get('kind')!r}", line=no)
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported version {header.get('version')!r}", line=no)
    return header, records[1:]


def read_dataset(path) -> Dataset:
    header, records = _parse_lines(path, DATASET_KIND)
    try:
        categories = {
            c["name"]: CategoryInfo(c["name"], c["generator"], bool(c["symmetric_about_y"]), tuple(map(float, c["size_range"])))
            for c in header["categories"]
        }
        priors = {name: _points(p, 3, f"prior {name}") for name, p in header["priors"].items()}
        seed, n_pixels, n_prior = int(header["seed"]), int(header["n_pixels"]), int(header["n_prior"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad dataset header ({exc})", line=1) from None
    instances = []
    for no, rec in records:
        try:
            inst = instance_from_dict(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad instance record ({type(exc).__name__}: {exc})", line=no) from None
        if inst.category not in categories:
            raise ParseError(f"{path}: unknown category {inst.category!r}", line=no)
        instances.append(inst)
    if "count" in header and header["count"] != len(instances):
        raise ParseError(f"{path}: header announces {header['count']} instances, found {len(instances)}", line=1)
    return Dataset(instances, priors, categories, seed, n_pixels, n_prior)


@dataclass(frozen=True, eq=False)
class Prediction:
    """Estimated pose and metric box size for one dataset instance."""

    id: int
    category: str
    pose: Pose
    size: np.ndarray
    center: np.ndarray | None = None
    """Box centre in camera space; defaults to the pose translation."""

    def to_detection(self) -> Detection:
        center = self.pose.translation if self.center is None else self.center
        box = OrientedBox3D(Pose(self.pose.rotation, center), self.size)
        return Detection(self.category, box, self.pose, scene=self.id)

    def __eq__(self, other):
        if not isinstance(other, Prediction):
            return NotImplemented
        same_center = (self.center is None and other.center is None) or (
            self.center is not None and other.center is not None and np.array_equal(self.center, other.center)
        )
        return (
            self.id == other.id
            and self.category == other.category
            and self.pose == other.pose
            and np.array_equal(self.size, other.size)
            and same_center
        )


def write_predictions(preds: Iterable[Prediction], path) -> None:
    preds = list(preds)
    with open(path, "w") as fh:
        fh.write(_dumps({"kind": PREDICTION_KIND, "version": FORMAT_VERSION, "count": len(preds)}) + "\n")
        for p in preds:
            rec = {"id": p.id, "category": p.category, "pose": pose_to_dict(p.pose), "size": [float(x) for x in p.size]}
            if p.center is not None:
                rec["center"] = [float(x) for x in p.center]
            fh.write(_dumps(rec) + "\n")


def read_predictions(path) -> list[Prediction]:
    header, records = _parse_lines(path, PREDICTION_KIND)
    preds = []
    for no, rec in records:
        try:
            size = np.array(rec["size"], dtype=float)
            if size.shape != (3,):
                raise ValueError("size must have 3 entries")
            center = None
            if "center" in rec:
                center = np.array(rec["center"], dtype=float)
                if center.shape != (3,):
                    raise ValueError("center must have 3 entries")
            preds.append(Prediction(int(rec["id"]), str(rec["category"]), pose_from_dict(rec["pose"]), size, center))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad prediction record ({type(exc).__name__}: {exc})", line=no) from None
    if header.get("count", len(preds)) != len(preds):
        raise ParseError(f"{path}: header announces {header['count']} predictions, found {len(preds)}", line=1)
    return preds


def write_ply(points: np.ndarray, path) -> None:
    """ASCII PLY with vertex positions only."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError("PLY export expects an (N, 3) array")
    with open(path, "w") as fh:
        fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(pts)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\nend_header\n")
        for p in pts:
            fh.write(" ".join(repr(float(x)) for x in p) + "\n")
