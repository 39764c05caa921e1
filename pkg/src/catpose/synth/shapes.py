"""Parametric surface families standing in for category meshes.

Every family samples points uniformly by area together with outward unit
normals, and reports its exact axis-aligned bounds so shapes can be
normalised to the unit cube without relying on a finite sample. Canonical
frames are y-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import rotation_about


class Primitive:
    def area(self) -> float:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(frozen=True)
class Revolution(Primitive):
    """Surface of revolution about the local y axis.

    ``profile`` is a polyline of (radius, height) vertices. Walking it with
    the solid on the left yields outward normals, so a profile that starts
    on the axis at the bottom, climbs the outside and returns to the axis
    at the top describes a closed solid.
    """

    profile: tuple[tuple[float, float], ...]
    rotation: tuple[tuple[float, ...], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def _segments(self):
        prof = np.asarray(self.profile, dtype=float)
        for (r0, y0), (r1, y1) in zip(prof[:-1], prof[1:]):
            slant = np.hypot(r1 - r0, y1 - y0)
            if slant > 0:
                yield r0, y0, r1, y1, np.pi * (r0 + r1) * slant

    def area(self) -> float:
        return float(sum(seg[4] for seg in self._segments()))

    def sample(self, n, rng):
        segs = list(self._segments())
        areas = np.array([s[4] for s in segs])
        idx = rng.choice(len(segs), size=n, p=areas / areas.sum())
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        w = rng.uniform(size=n)
        for k, (r0, y0, r1, y1, _) in enumerate(segs):
            sel = idx == k
            # area density along the segment grows linearly with radius
            if abs(r1 - r0) < 1e-12:
                t = w[sel]
            else:
                t = (np.sqrt(r0**2 + w[sel] * (r1**2 - r0**2)) - r0) / (r1 - r0)
            r = r0 + (r1 - r0) * t
            y = y0 + (y1 - y0) * t
            c, s = np.cos(theta[sel]), np.sin(theta[sel])
            pts[sel] = np.stack([r * c, y, r * s], axis=1)
            dr, dy = r1 - r0, y1 - y0
            norm = np.hypot(dr, dy)
            nrm[sel] = np.stack([dy * c, np.full_like(c, -dr), dy * s], axis=1) / norm
        rot = np.asarray(self.rotation)
        return pts @ rot.T + np.asarray(self.offset), nrm @ rot.T

    def bounds(self):
        prof = np.asarray(self.profile, dtype=float)
        r_max = prof[:, 0].max()
        # a circle of radius r_max in the local xz plane, at each profile height
        rot = np.asarray(self.rotation)
        lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
        for y in (prof[:, 1].min(), prof[:, 1].max()):
            centre = rot @ np.array([0.0, y, 0.0])
            # extent of a rotated circle along each world axis
            half = r_max * np.sqrt(rot[:, 0] ** 2 + rot[:, 2] ** 2)
            lo = np.minimum(lo, centre - half)
            hi = np.maximum(hi, centre + half)
        off = np.asarray(self.offset)
        return lo + off, hi + off


@dataclass(frozen=True)
class Cuboid(Primitive):
    size: tuple[float, float, float]
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[tuple[float, ...], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def _face_areas(self):
        sx, sy, sz = self.size
        return np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])

    def area(self) -> float:
        return float(self._face_areas().sum())

    def sample(self, n, rng):
        half = 0.5 * np.asarray(self.size, dtype=float)
        areas = self._face_areas()
        face = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts[np.arange(n), axis] = sign * half[axis]
        nrm = np.zeros((n, 3))
        nrm[np.arange(n), axis] = sign
        rot = np.asarray(self.rotation)
        return pts @ rot.T + np.asarray(self.center), nrm @ rot.T

    def corners(self) -> np.ndarray:
        half = 0.5 * np.asarray(self.size, dtype=float)
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
        return (signs * half) @ np.asarray(self.rotation).T + np.asarray(self.center)

    def bounds(self):
        c = self.corners()
        return c.min(axis=0), c.max(axis=0)


@dataclass(frozen=True)
class TorusArc(Primitive):
    """Tube of radius ``tube`` around an arc of radius ``major`` in the xy plane.

    The arc is centred at ``center`` and spans angles in [-half_angle, half_angle]
    measured from +x.
    """

    major: float
    tube: float
    half_angle: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def area(self) -> float:
        return float(2 * self.half_angle * self.major * 2 * np.pi * self.tube)

    def sample(self, n, rng):
        out_psi = np.empty(0)
        # rejection sampling: area element is proportional to major + tube*cos(psi)
        while len(out_psi) < n:
            psi = rng.uniform(0.0, 2 * np.pi, size=2 * n)
            keep = rng.uniform(size=2 * n) * (self.major + self.tube) <= self.major + self.tube * np.cos(psi)
            out_psi = np.concatenate([out_psi, psi[keep]])
        psi = out_psi[:n]
        phi = rng.uniform(-self.half_angle, self.half_angle, size=n)
        ring = self.major + self.tube * np.cos(psi)
        pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), self.tube * np.sin(psi)], axis=1)
        nrm = np.stack([np.cos(psi) * np.cos(phi), np.cos(psi) * np.sin(phi), np.sin(psi)], axis=1)
        return pts + np.asarray(self.center), nrm

    def bounds(self):
        if self.half_angle >= np.pi / 2:
            raise ValueError("handle arcs are limited to half angles below 90 degrees")
        a = self.half_angle
        outer = self.major + self.tube
        lo = np.array([(self.major - self.tube) * np.cos(a), -outer * np.sin(a), -self.tube])
        hi = np.array([outer, outer * np.sin(a), self.tube])
        c = np.asarray(self.center)
        return lo + c, hi + c


@dataclass(frozen=True)
class ShapeFamily:
    """Union of primitives forming the mean shape of a category."""

    kind: str
    primitives: tuple[Primitive, ...]

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        areas = np.array([p.area() for p in self.primitives])
        counts = rng.multinomial(n, areas / areas.sum())
        pts, nrm = [], []
        for prim, k in zip(self.primitives, counts):
            if k:
                p, q = prim.sample(int(k), rng)
                pts.append(p)
                nrm.append(q)
        return np.concatenate(pts), np.concatenate(nrm)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        los, his = zip(*(p.bounds() for p in self.primitives))
        return np.min(los, axis=0), np.max(his, axis=0)

    def normalization(self) -> tuple[np.ndarray, float]:
        """Centre and divisor mapping the shape into the unit cube (largest extent 1)."""
        lo, hi = self.bounds()
        return 0.5 * (lo + hi), float((hi - lo).max())

    def corners(self) -> np.ndarray:
        if len(self.primitives) != 1 or not isinstance(self.primitives[0], Cuboid):
            raise ValueError(f"corner sampling needs a single-box family, not {self.kind!r}")
        return self.primitives[0].corners()


def cylinder(radius: float = 0.35, height: float = 1.0) -> ShapeFamily:
    prof = ((0.0, 0.0), (radius, 0.0), (radius, height), (0.0, height))
    return ShapeFamily("cylinder", (Revolution(prof),))


def bottle(radius: float = 0.3, height: float = 1.0, neck: float = 0.11) -> ShapeFamily:
    prof = (
        (0.0, 0.0),
        (radius, 0.0),
        (radius, 0.6 * height),
        (0.75 * radius, 0.72 * height),
        (neck, 0.8 * height),
        (neck, height),
        (0.0, height),
    )
    return ShapeFamily("cylinder", (Revolution(prof),))


def bowl(radius: float = 0.5, depth: float = 0.45, wall: float = 0.04, segments: int = 10) -> ShapeFamily:
    """Open spherical-cap shell: outer wall, rim and inner wall."""
    ang = np.linspace(0.0, np.pi / 2, segments + 1)
    outer = [(radius * np.sin(a), depth * (1 - np.cos(a))) for a in ang]
    ri, di = radius - wall, depth - wall
    inner = [(ri * np.sin(a), wall + di * (1 - np.cos(a))) for a in ang[::-1]]
    prof = tuple(outer + inner)
    return ShapeFamily("bowl-hemisphere", (Revolution(prof),))


def box(size=(1.0, 0.7, 0.5)) -> ShapeFamily:
    return ShapeFamily("box", (Cuboid(tuple(float(s) for s in size)),))


def camera(size=(1.0, 0.65, 0.45), lens_radius: float = 0.22, lens_length: float = 0.3) -> ShapeFamily:
    """Box body with a cylindrical lens on the +z face."""
    body = Cuboid(tuple(size))
    to_z = tuple(map(tuple, rotation_about("x", 90.0)))
    lens_prof = ((0.0, 0.0), (lens_radius, 0.0), (lens_radius, lens_length), (0.0, lens_length))
    # local y of the lens maps to world +z via the rotation above
    lens = Revolution(lens_prof, rotation=to_z, offset=(0.15, -0.02, 0.5 * size[2]))
    return ShapeFamily("box", (body, lens))


def laptop(width: float = 1.0, depth: float = 0.7, base_t: float = 0.05, screen_t: float = 0.03, opening_deg: float = 110.0) -> ShapeFamily:
    """Base slab plus a screen slab hinged along the back edge."""
    base = Cuboid((width, base_t, depth), center=(0.0, 0.5 * base_t, 0.0))
    rot = rotation_about("x", -(opening_deg - 90.0))
    hinge = np.array([0.0, base_t, -0.5 * depth])
    local_centre = np.array([0.0, 0.5 * depth, 0.5 * screen_t])
    screen = Cuboid((width, depth, screen_t), center=tuple(hinge + rot @ local_centre), rotation=tuple(map(tuple, rot)))
    return ShapeFamily("box-with-hinge", (base, screen))


def mug(radius: float = 0.33, height: float = 0.85, handle_major: float = 0.2, handle_tube: float = 0.045) -> ShapeFamily:
    """Closed cylinder with a half-torus handle on the +x side."""
    body = cylinder(radius, height).primitives[0]
    handle = TorusArc(handle_major, handle_tube, np.pi / 2 * 0.95, center=(radius - 0.02, 0.5 * height, 0.0))
    return ShapeFamily("cylinder-with-handle", (body, handle))
