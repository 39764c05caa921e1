"""Synthetic category / instance / scene generator with exact ground truth."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError
from ..evaluation import Detection, OrientedBox3D
from ..geometry import BBox2D, CameraIntrinsics, DepthPatch, Pose, random_rotation
from . import shapes

IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480
DEFAULT_INTRINSICS = CameraIntrinsics(577.5, 577.5, 319.5, 239.5)
DEPTH_RANGE = (0.6, 2.5)
N_DENSE = 6000
MAX_RETRIES = 100


@dataclass(frozen=True)
class CategorySpec:
    name: str
    family: shapes.ShapeFamily
    symmetric_about_y: bool
    size_range: tuple[float, float]
    """Range of the metric length of the object's largest canonical extent (m)."""

    def __post_init__(self):
        lo, hi = self.size_range
        if not (0 < lo <= hi):
            raise InvalidInputError(f"invalid size range {self.size_range} for {self.name}")


DEFAULT_CATEGORIES: tuple[CategorySpec, ...] = (
    CategorySpec("bottle", shapes.bottle(), True, (0.16, 0.26)),
    CategorySpec("bowl", shapes.bowl(), True, (0.12, 0.20)),
    CategorySpec("camera", shapes.camera(), False, (0.11, 0.17)),
    CategorySpec("can", shapes.cylinder(0.33, 1.0), True, (0.10, 0.16)),
    CategorySpec("laptop", shapes.laptop(), False, (0.26, 0.38)),
    CategorySpec("mug", shapes.mug(), False, (0.10, 0.16)),
)


def category_by_name(name: str, specs: Sequence[CategorySpec] = DEFAULT_CATEGORIES) -> CategorySpec:
    for spec in specs:
        if spec.name == name:
            return spec
    raise InvalidInputError(f"unknown category {name!r}")


def _farthest_points(points: np.ndarray, k: int) -> np.ndarray:
    idx = np.empty(k, dtype=int)
    idx[0] = int(np.argmin(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    dist = np.full(len(points), np.inf)
    for i in range(1, k):
        dist = np.minimum(dist, ((points - points[idx[i - 1]]) ** 2).sum(axis=1))
        idx[i] = int(np.argmax(dist))
    return idx


def normalized_surface(spec: CategorySpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform samples of the mean shape, mapped into the unit cube."""
    pts, nrm = spec.family.sample(n, rng)
    centre, extent = spec.family.normalization()
    return (pts - centre) / extent, nrm


def make_prior(spec: CategorySpec, n_m: int, seed: int = 0, sampling: str = "surface") -> np.ndarray:
    """Mean-shape point cloud of ``n_m`` points inside the unit cube.

    ``sampling="surface"`` spreads points by farthest-point selection over a
    dense area-uniform sample; ``"corners"`` returns the 8 corners of a
    single-box family.
    """
    if n_m < 4:
        raise InvalidInputError("a prior needs at least 4 points")
    centre, extent = spec.family.normalization()
    if sampling == "corners":
        if n_m != 8:
            raise InvalidInputError("corner sampling yields exactly 8 points")
        return (spec.family.corners() - centre) / extent
    if sampling != "surface":
        raise InvalidInputError(f"unknown sampling mode {sampling!r}")
    rng = np.random.default_rng([seed, 7919, n_m])
    dense, _ = normalized_surface(spec, max(20 * n_m, 2000), rng)
    return dense[_farthest_points(dense, n_m)]


@dataclass(frozen=True)
class InstanceDeformation:
    """Per-axis scaling plus a low-amplitude smooth displacement field.

    For y-symmetric categories the x and z scales are tied and the
    displacement is radial and depends on height only, so the instance keeps
    its symmetry.
    """

    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    amplitude: float = 0.0
    frequency: tuple[tuple[float, ...], ...] = ((0.0, 0.0, 0.0),) * 3
    phase: tuple[float, float, float] = (0.0, 0.0, 0.0)
    symmetric: bool = False

    @classmethod
    def sample(cls, rng: np.random.Generator, symmetric: bool, scale_jitter: float = 0.2, amplitude: float = 0.015):
        sx, sy, sz = rng.uniform(1 - scale_jitter, 1 + scale_jitter, size=3)
        if symmetric:
            sz = sx
        freq = rng.normal(0.0, 2.0, size=(3, 3))
        phase = rng.uniform(0, 2 * np.pi, size=3)
        return cls(
            scale=(float(sx), float(sy), float(sz)),
            amplitude=float(amplitude),
            frequency=tuple(map(tuple, freq.tolist())),
            phase=tuple(phase.tolist()),
            symmetric=symmetric,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        out = points * np.asarray(self.scale)
        if self.amplitude == 0.0:
            return out
        if self.symmetric:
            w = np.asarray(self.frequency)[0, 1]
            radial = 1.0 + self.amplitude * np.sin(np.pi * w * points[:, 1] + self.phase[0])
            out[:, 0] *= radial
            out[:, 2] *= radial
            return out
        freq = np.asarray(self.frequency)
        return out + self.amplitude * np.sin(np.pi * points @ freq.T + np.asarray(self.phase))

    def apply_normals(self, normals: np.ndarray) -> np.ndarray:
        n = normals / np.asarray(self.scale)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def _unit_cube_map(points: np.ndarray) -> tuple[np.ndarray, float]:
    lo, hi = points.min(axis=0), points.max(axis=0)
    return 0.5 * (lo + hi), float((hi - lo).max())


@dataclass(frozen=True, eq=False)
class SceneInstance:
    id: int
    category: str
    gt_pose: Pose
    gt_nocs: np.ndarray
    """Canonical coordinates of the sampled pixels (N_p x 3), row-aligned with the depth patch."""
    depth_patch: DepthPatch
    bbox: BBox2D
    intrinsics: CameraIntrinsics
    gt_size: np.ndarray
    """Metric edge lengths of the instance's canonical bounding box."""
    model: np.ndarray
    """Deformed prior: the instance's canonical model, row-aligned with the category prior."""

    def camera_points(self) -> np.ndarray:
        from ..geometry import back_project

        return back_project(self.depth_patch, self.intrinsics)

    def box(self) -> OrientedBox3D:
        return OrientedBox3D(Pose(self.gt_pose.rotation, self.gt_pose.translation), self.gt_size)

    def as_detection(self) -> Detection:
        return Detection(self.category, self.box(), self.gt_pose, scene=self.id)

    def __eq__(self, other):
        if not isinstance(other, SceneInstance):
            return NotImplemented
        return (
            self.id == other.id
            and self.category == other.category
            and self.gt_pose == other.gt_pose
            and np.array_equal(self.gt_nocs, other.gt_nocs)
            and self.depth_patch == other.depth_patch
            and self.bbox == other.bbox
            and self.intrinsics == other.intrinsics
            and np.array_equal(self.gt_size, other.gt_size)
            and np.array_equal(self.model, other.model)
        )


def canonicalize_symmetric(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """Fix the unobservable spin about y: the camera must lie in the object's +z half of the yz plane."""
    v = rotation.T @ (-np.asarray(translation, dtype=float))
    phi = np.arctan2(-v[0], v[2])
    c, s = np.cos(-phi), np.sin(-phi)
    ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return rotation @ ry


def _render(cam_pts: np.ndarray, cam_nrm: np.ndarray, intr: CameraIntrinsics):
    """Point splatting with a per-pixel z-buffer over front-facing points.

    Returns indices of the winning points (one per occupied pixel cell) and
    their exact sub-pixel projections.
    """
    facing = np.einsum("ij,ij->i", cam_nrm, cam_pts) < 0
    idx = np.flatnonzero(facing & (cam_pts[:, 2] > 0))
    p = cam_pts[idx]
    u = intr.fx * p[:, 0] / p[:, 2] + intr.cx
    v = intr.fy * p[:, 1] / p[:, 2] + intr.cy
    cu = np.floor(u).astype(np.int64)
    cv = np.floor(v).astype(np.int64)
    cell = cv * 100003 + cu
    order = np.lexsort((p[:, 2], cell))
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell[order][1:] != cell[order][:-1]
    win = order[first]
    return idx[win], np.stack([u[win], v[win]], axis=1)


def sample_instance(
    spec: CategorySpec,
    prior: np.ndarray,
    rng: np.random.Generator,
    instance_id: int = 0,
    n_pixels: int = 64,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    deformation: InstanceDeformation | None = None,
    pose: Pose | None = None,
    image_size: tuple[int, int] = (IMAGE_WIDTH, IMAGE_HEIGHT),
) -> SceneInstance:
    """Draw one posed, deformed instance and render its object-level depth.

    ``deformation`` and ``pose`` override the random draws (the pose's scale is
    the metric size of the largest canonical extent).
    """
    width, height = image_size
    if deformation is None:
        deformation = InstanceDeformation.sample(rng, spec.symmetric_about_y)
    dense, normals = normalized_surface(spec, N_DENSE, rng)

    model = deformation.apply(prior)
    centre, extent = _unit_cube_map(model)
    model = (model - centre) / extent
    dense = (deformation.apply(dense) - centre) / extent
    normals = deformation.apply_normals(normals)
    gt_nocs_extent = model.max(axis=0) - model.min(axis=0)

    for _ in range(MAX_RETRIES):
        if pose is None:
            z = rng.uniform(*DEPTH_RANGE)
            u0 = rng.uniform(0.2 * width, 0.8 * width)
            v0 = rng.uniform(0.2 * height, 0.8 * height)
            t = np.array([z * (u0 - intrinsics.cx) / intrinsics.fx, z * (v0 - intrinsics.cy) / intrinsics.fy, z])
            rot = random_rotation(rng)
            if spec.symmetric_about_y:
                rot = canonicalize_symmetric(rot, t)
            s = rng.uniform(*spec.size_range)
            trial = Pose(rot, t, s)
        else:
            trial = pose
        cam = trial.apply(dense)
        if np.any(cam[:, 2] <= 0):
            if pose is not None:
                raise InvalidInputError("object crosses the camera plane")
            continue
        win, uv = _render(cam, normals @ trial.rotation.T, intrinsics)
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
        if len(win) >= n_pixels and inside.all():
            break
        if pose is not None:
            raise InvalidInputError("fixed pose does not render enough pixels inside the image")
    else:
        raise RuntimeError(f"could not place a {spec.name} inside the image after {MAX_RETRIES} tries")

    bbox = BBox2D(float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max()))
    # the four silhouette extremes that define the box are always sampled
    extremes = np.unique([uv[:, 0].argmin(), uv[:, 0].argmax(), uv[:, 1].argmin(), uv[:, 1].argmax()])[:n_pixels]
    rest = np.setdiff1d(np.arange(len(win)), extremes)
    pick = np.sort(np.concatenate([extremes, rng.choice(rest, size=n_pixels - len(extremes), replace=False)]))
    patch = DepthPatch(uv[pick], cam[win[pick], 2])
    return SceneInstance(
        id=int(instance_id),
        category=spec.name,
        gt_pose=trial,
        gt_nocs=dense[win[pick]],
        depth_patch=patch,
        bbox=bbox,
        intrinsics=intrinsics,
        gt_size=trial.scale * gt_nocs_extent,
        model=model,
    )


@dataclass(frozen=True)
class CategoryInfo:
    """What a dataset file records about a category."""

    name: str
    generator: str
    symmetric_about_y: bool
    size_range: tuple[float, float]

    @classmethod
    def from_spec(cls, spec: CategorySpec) -> "CategoryInfo":
        return cls(spec.name, spec.family.kind, spec.symmetric_about_y, tuple(map(float, spec.size_range)))


@dataclass(eq=False)
class Dataset:
    instances: list[SceneInstance]
    priors: dict[str, np.ndarray]
    categories: dict[str, CategoryInfo]
    seed: int
    n_pixels: int
    n_prior: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.instances)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.n_pixels == other.n_pixels
            and self.n_prior == other.n_prior
            and self.categories == other.categories
            and self.priors.keys() == other.priors.keys()
            and all(np.array_equal(self.priors[k], other.priors[k]) for k in self.priors)
            and self.instances == other.instances
        )

    @property
    def symmetric_categories(self) -> set[str]:
        return {c.name for c in self.categories.values() if c.symmetric_about_y}

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(
            [self.instances[i] for i in indices],
            self.priors,
            self.categories,
            self.seed,
            self.n_pixels,
            self.n_prior,
            dict(self.meta),
        )

    def split(self, n_test_per_category: int) -> tuple["Dataset", "Dataset"]:
        """Hold out the last ``n_test_per_category`` instances of each category."""
        by_cat: dict[str, list[int]] = {}
        for i, inst in enumerate(self.instances):
            by_cat.setdefault(inst.category, []).append(i)
        train, test = [], []
        for idx in by_cat.values():
            cut = max(len(idx) - n_test_per_category, 0)
            train += idx[:cut]
            test += idx[cut:]
        return self.subset(sorted(train)), self.subset(sorted(test))


def generate_dataset(
    specs: Sequence[CategorySpec] = DEFAULT_CATEGORIES,
    n_per_category: int = 100,
    seed: int = 0,
    n_pixels: int = 64,
    n_prior: int = 128,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    threads: int = 1,
) -> Dataset:
    """Deterministic dataset; instance ``i`` draws from the stream ``(seed, i)``.

    Results do not depend on ``threads``.
    """
    if n_per_category < 0:
        raise InvalidInputError("n_per_category must be non-negative")
    priors = {spec.name: make_prior(spec, n_prior, seed) for spec in specs}
    jobs = [(spec, k * n_per_category + j) for k, spec in enumerate(specs) for j in range(n_per_category)]

    def build(job):
        spec, idx = job
        rng = np.random.default_rng([seed, idx])
        return sample_instance(spec, priors[spec.name], rng, idx, n_pixels, intrinsics)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            instances = list(pool.map(build, jobs))
    else:
        instances = [build(job) for job in jobs]
    return Dataset(
        instances=instances,
        priors=priors,
        categories={spec.name: CategoryInfo.from_spec(spec) for spec in specs},
        seed=seed,
        n_pixels=n_pixels,
        n_prior=n_prior,
    )
