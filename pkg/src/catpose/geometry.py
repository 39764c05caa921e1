"""Camera model, pose algebra, position hints and similarity alignment.

Conventions: camera space is metric (meters), the camera looks down +z,
image coordinates are pixels with u to the right and v downwards. Canonical
(NOCS) coordinates are dimensionless. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfigurationError, InvalidInputError

_ORTHO_TOL = 1e-9
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not np.isfinite([self.cx, self.cy]).all():
            raise InvalidInputError("principal point must be finite")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned image box given by its left, top, right and bottom pixel coordinates."""

    l: float
    t: float
    r: float
    b: float

    def __post_init__(self):
        if not (self.r > self.l and self.b > self.t):
            raise InvalidInputError(
                f"degenerate box (l={self.l}, t={self.t}, r={self.r}, b={self.b}); need r > l and b > t"
            )

    @property
    def width(self) -> float:
        return self.r - self.l

    @property
    def height(self) -> float:
        return self.b - self.t

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.l + self.r), 0.5 * (self.t + self.b)

    def contains(self, pixels: np.ndarray, tol: float = 1e-9) -> bool:
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return bool(
            np.all(pixels[:, 0] >= self.l - tol)
            and np.all(pixels[:, 0] <= self.r + tol)
            and np.all(pixels[:, 1] >= self.t - tol)
            and np.all(pixels[:, 1] <= self.b + tol)
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Similarity transform taking canonical coordinates to camera space.

    ``x_cam = scale * rotation @ x_canonical + translation``
    """

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise InvalidInputError("pose entries must be finite")
        if np.abs(rot.T @ rot - np.eye(3)).max() > _ORTHO_TOL:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise InvalidInputError("rotation is improper (det != +1)")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"scale must be positive, got {self.scale}")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self.scale * points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        out = np.eye(4)
        out[:3, :3] = self.scale * self.rotation
        out[:3, 3] = self.translation
        return out

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.scale == other.scale
        )

    def __repr__(self):
        return (
            f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()}, "
            f"scale={self.scale!r})"
        )


@dataclass(frozen=True, eq=False)
class DepthPatch:
    """Sampled object pixels (original image frame) with their depths."""

    pixels: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=float).reshape(-1, 2)
        depths = np.array(self.depths, dtype=float).reshape(-1)
        if len(pixels) == 0:
            raise InvalidInputError("depth patch must contain at least one pixel")
        if len(pixels) != len(depths):
            raise InvalidInputError(f"{len(pixels)} pixels but {len(depths)} depths")
        if not (np.isfinite(pixels).all() and np.isfinite(depths).all()):
            raise InvalidInputError("depth patch entries must be finite")
        if np.any(depths <= 0):
            raise InvalidInputError("depths must be strictly positive")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "depths", depths)

    def __len__(self):
        return len(self.depths)

    def __eq__(self, other):
        if not isinstance(other, DepthPatch):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels) and np.array_equal(self.depths, other.depths)


def as_points(points, name: str = "points") -> np.ndarray:
    """Validate and return an (N, 3) float array with N >= 1 and finite entries."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (N, 3), got {arr.shape}")
    if len(arr) == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} has non-finite coordinates")
    return arr


def ngph_encode(bbox: BBox2D, intr: CameraIntrinsics) -> np.ndarray:
    """Normalized global position hints of a detection box.

    Returns ``[fx/(r-l), fy/(b-t), (l-cx)/fx, (t-cy)/fy, (r-cx)/fx, (b-cy)/fy]``.
    The first two entries tie box size to focal length (a proxy for inverse
    depth), the last four are the box edges on the normalized image plane.
    """
    l, t, r, b = bbox.l, bbox.t, bbox.r, bbox.b
    if not (r > l and b > t):
        raise InvalidInputError("degenerate box")
    return np.array(
        [
            intr.fx / (r - l),
            intr.fy / (b - t),
            (l - intr.cx) / intr.fx,
            (t - intr.cy) / intr.fy,
            (r - intr.cx) / intr.fx,
            (b - intr.cy) / intr.fy,
        ]
    )


def back_project(patch: DepthPatch, intr: CameraIntrinsics) -> np.ndarray:
    """Lift pixels with depth to camera-space points, shape (N_p, 3)."""
    if np.any(patch.depths <= 0):
        raise InvalidInputError("non-positive depth")
    return back_project_arrays(patch.pixels, patch.depths, intr)


def back_project_arrays(pixels: np.ndarray, depths: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Array form of :func:`back_project` without validation (used inside training loops)."""
    z = np.asarray(depths, dtype=float)
    u = pixels[..., 0]
    v = pixels[..., 1]
    return np.stack([z * (u - intr.cx) / intr.fx, z * (v - intr.cy) / intr.fy, z], axis=-1)


def project(points: np.ndarray, intr: CameraIntrinsics) -> DepthPatch:
    """Pinhole projection of camera-space points; all z must be positive."""
    pts = as_points(points)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise InvalidInputError("points must lie in front of the camera (z > 0)")
    u = intr.fx * pts[:, 0] / z + intr.cx
    v = intr.fy * pts[:, 1] / z + intr.cy
    return DepthPatch(np.stack([u, v], axis=1), z.copy())


def umeyama_align(source: np.ndarray, target: np.ndarray) -> Pose:
    """Least-squares similarity transform with ``target ~ s * R @ source + t``.

    Closed form from the SVD of the cross-covariance; a reflection in the
    SVD is corrected by flipping the sign of the last singular direction so
    the returned rotation is always proper.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape != dst.shape:
        raise InvalidInputError(f"point count mismatch: {src.shape[0]} vs {dst.shape[0]}")
    n = len(src)
    if n < 3:
        raise InvalidInputError("need at least 3 correspondences")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst

    src_sv = np.linalg.svd(src_c, compute_uv=False)
    if src_sv[1] <= _RANK_TOL * max(src_sv[0], 1e-300):
        raise DegenerateConfigurationError("source points are collinear or coincident (rank < 2)")

    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] <= _RANK_TOL * max(d[0], 1e-300):
        raise DegenerateConfigurationError("cross-covariance has rank < 2; rotation is not unique")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = (u * sign) @ vt
    var_src = (src_c**2).sum() / n
    scale = float((d * sign).sum() / var_src)
    if not scale > 0:
        raise DegenerateConfigurationError("alignment produced a non-positive scale")
    trans = mu_dst - scale * rot @ mu_src
    return Pose(rot, trans, scale)


def rotation_error_deg(pred: Pose, gt: Pose, symmetric_about_y: bool = False) -> float:
    """Angular rotation error in degrees.

    For categories symmetric about their canonical y axis only the direction
    of that axis is compared.
    """
    if symmetric_about_y:
        y_pred = pred.rotation[:, 1]
        y_gt = gt.rotation[:, 1]
        cos = float(np.clip(y_pred @ y_gt, -1.0, 1.0))
        sin = float(np.linalg.norm(np.cross(y_pred, y_gt)))
    else:
        rel = pred.rotation.T @ gt.rotation
        # atan2 of (sin, cos) equals the clamped arccos of (trace - 1) / 2 but
        # keeps precision for angles near zero.
        cos = float(np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0))
        skew = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
        sin = float(np.linalg.norm(skew) / 2.0)
    return float(np.degrees(np.arctan2(sin, cos)))


def translation_error_m(pred: Pose, gt: Pose) -> float:
    return float(np.linalg.norm(pred.translation - gt.translation))


def rotation_about(axis: str, degrees: float) -> np.ndarray:
    """Rotation matrix about a principal axis ('x', 'y' or 'z')."""
    return Rotation.from_euler(axis, degrees, degrees=True).as_matrix()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Rotation.from_quat(q).as_matrix()
