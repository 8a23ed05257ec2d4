"""
Analytic reference shapes.

Each shape knows its signed distance (negative inside), can sample points on its
surface and can mesh itself. They provide ground truth for supervised training and
reference surfaces for evaluation.
"""
import logging
import math
from abc import ABC, abstractmethod
from typing import Callable

import numpy as np
import trimesh

from errors import InvalidArgument
from extraction.surface import marching_cubes, to_trimesh
from geometry.spatial import SpatialIndex
from models import Normalization, PointCloud, SampledSurface, ScalarGrid, TriangleMesh

__all__ = [
    'AnalyticShape', 'Sphere', 'Torus', 'Box', 'Dumbbell', 'BentCylinder', 'Blob', 'SHAPES',
    'shape_from_spec', 'angular_segments', 'AnalyticField'
]

logger = logging.getLogger(__name__)

# Shapes are meshed on this box (shape units)
REFERENCE_HALF_EXTENT = 0.55
GRADIENT_STEP = 1e-6


class AnalyticShape(ABC):
    name: str = ''

    @abstractmethod
    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of each point, negative inside."""

    @abstractmethod
    def params(self) -> dict[str, float]:
        """The constructor arguments, used to round-trip `spec`."""

    def spec(self) -> str:
        return self.name + ':' + ','.join(f'{k}={v:.17g}' for k, v in self.params().items())

    def _sample_exact(self, n: int, rng: np.random.Generator) -> np.ndarray | None:
        """Exactly uniform surface samples, for shapes where that is easy."""
        return None

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Unit SDF gradient by central differences."""
        points = np.asarray(points, dtype=np.float64)
        grad = np.empty_like(points)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = GRADIENT_STEP
            grad[:, axis] = (self.sdf(points + step) - self.sdf(points - step)) / (2 * GRADIENT_STEP)
        return grad / np.linalg.norm(grad, axis=1, keepdims=True)

    def reference_mesh(self, resolution: int = 128) -> TriangleMesh:
        """Marching-cubes mesh of the exact SDF."""
        lo = np.full(3, -REFERENCE_HALF_EXTENT)
        grid = ScalarGrid(resolution, lo, -lo, np.zeros((resolution,) * 3))
        grid.values = self.sdf(grid.nodes()).reshape((resolution,) * 3)
        return marching_cubes(grid)

    def _sample_points(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        points = self._sample_exact(n, rng)
        if points is not None:
            return points

        # Area-uniform samples on a fine mesh, pulled onto the zero set by one Newton step
        mesh = to_trimesh(self.reference_mesh(160))
        points, _ = trimesh.sample.sample_surface(mesh, n, seed=seed)
        points = np.asarray(points, dtype=np.float64)
        return points - self.sdf(points)[:, None] * self.gradient(points)

    def sample_surface(self, n: int, seed: int = 0, segments: int = 0) -> PointCloud:
        """Points on the surface, optionally labelled by azimuth sector."""
        points = self._sample_points(n, seed)
        labels = angular_segments(points, segments) if segments else None
        return PointCloud(points, labels)

    def sample_oriented(self, n: int, seed: int = 0) -> SampledSurface:
        """Surface samples with their outward normals."""
        points = self._sample_points(n, seed)
        return SampledSurface(points, self.gradient(points), source=self.spec())

    def normalized_sdf(self, normalization: Normalization) -> Callable[[np.ndarray], np.ndarray]:
        """The SDF expressed in the normalized coordinates of a cloud."""
        def sdf(points: np.ndarray) -> np.ndarray:
            return self.sdf(normalization.invert(points)) / normalization.scale
        return sdf


def _unit_vectors(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class Sphere(AnalyticShape):
    name = 'sphere'

    def __init__(self, radius: float = 0.3, cx: float = 0.0, cy: float = 0.0, cz: float = 0.0):
        self.radius = radius
        self.center = np.array([cx, cy, cz], dtype=np.float64)

    def params(self):
        return {'radius': self.radius, 'cx': self.center[0], 'cy': self.center[1], 'cz': self.center[2]}

    def sdf(self, points):
        return np.linalg.norm(np.asarray(points) - self.center, axis=-1) - self.radius

    def _sample_exact(self, n, rng):
        return self.center + self.radius * _unit_vectors(n, rng)


class Torus(AnalyticShape):
    name = 'torus'

    def __init__(self, major: float = 0.25, minor: float = 0.1):
        if not 0 < minor < major:
            raise InvalidArgument('A torus needs 0 < minor < major')
        self.major = major
        self.minor = minor

    def params(self):
        return {'major': self.major, 'minor': self.minor}

    def sdf(self, points):
        points = np.asarray(points)
        ring = np.hypot(points[..., 0], points[..., 1]) - self.major
        return np.hypot(ring, points[..., 2]) - self.minor

    def _sample_exact(self, n, rng):
        # The area element is proportional to (major + minor cos phi); rejection-sample phi
        phis = []
        count = 0
        while count < n:
            phi = rng.uniform(0, 2 * math.pi, size=2 * n)
            keep = rng.uniform(0, 1, size=2 * n) < (self.major + self.minor * np.cos(phi)) / (self.major + self.minor)
            phis.append(phi[keep])
            count += int(keep.sum())
        phi = np.concatenate(phis)[:n]
        theta = rng.uniform(0, 2 * math.pi, size=n)
        ring = self.major + self.minor * np.cos(phi)
        return np.stack([ring * np.cos(theta), ring * np.sin(theta), self.minor * np.sin(phi)], axis=1)


class Box(AnalyticShape):
    name = 'box'

    def __init__(self, hx: float = 0.25, hy: float = 0.15, hz: float = 0.1):
        self.half = np.array([hx, hy, hz], dtype=np.float64)

    def params(self):
        return {'hx': self.half[0], 'hy': self.half[1], 'hz': self.half[2]}

    def sdf(self, points):
        q = np.abs(np.asarray(points)) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)


class Dumbbell(AnalyticShape):
    """Two equal spheres on the x axis."""
    name = 'dumbbell'

    def __init__(self, radius: float = 0.15, separation: float = 0.5):
        if separation <= 2 * radius:
            raise InvalidArgument('Dumbbell lobes must not overlap')
        self.radius = radius
        self.separation = separation
        self.lobes = [Sphere(radius, -separation / 2), Sphere(radius, separation / 2)]

    def params(self):
        return {'radius': self.radius, 'separation': self.separation}

    def sdf(self, points):
        return np.minimum(self.lobes[0].sdf(points), self.lobes[1].sdf(points))

    def _sample_exact(self, n, rng):
        on_right = rng.uniform(size=n) < 0.5
        points = self.radius * _unit_vectors(n, rng)
        points[:, 0] += np.where(on_right, self.separation / 2, -self.separation / 2)
        return points

    def lobe_of(self, points: np.ndarray) -> np.ndarray:
        """0 for the lobe at negative x, 1 otherwise."""
        return (np.asarray(points)[:, 0] > 0).astype(np.int64)


class BentCylinder(AnalyticShape):
    """A round-capped tube bent along a circular arc in the xy plane, opening towards -x."""
    name = 'bent_cylinder'

    def __init__(self, bend_radius: float = 0.3, tube_radius: float = 0.07, angle: float = 1.5 * math.pi):
        self.bend_radius = bend_radius
        self.tube_radius = tube_radius
        self.angle = angle
        half = angle / 2
        self.ends = bend_radius * np.array([[math.cos(half), math.sin(half), 0.0],
                                            [math.cos(half), -math.sin(half), 0.0]])

    def params(self):
        return {'bend_radius': self.bend_radius, 'tube_radius': self.tube_radius, 'angle': self.angle}

    def sdf(self, points):
        points = np.asarray(points)
        azimuth = np.arctan2(points[..., 1], points[..., 0])
        to_arc = np.hypot(np.hypot(points[..., 0], points[..., 1]) - self.bend_radius, points[..., 2])
        to_ends = np.minimum(np.linalg.norm(points - self.ends[0], axis=-1),
                             np.linalg.norm(points - self.ends[1], axis=-1))
        on_arc = np.abs(azimuth) <= self.angle / 2
        return np.where(on_arc, to_arc, to_ends) - self.tube_radius


class Blob(AnalyticShape):
    """Smooth union of spheres, roughly a sitting bunny."""
    name = 'blob'

    LOBES = (
        ((0.0, 0.0, -0.08), 0.2),
        ((0.16, 0.0, 0.1), 0.12),
        ((0.2, 0.05, 0.26), 0.05),
        ((0.2, -0.05, 0.26), 0.05),
        ((-0.19, 0.0, -0.06), 0.06),
    )

    def __init__(self, smoothness: float = 0.05):
        self.smoothness = smoothness

    def params(self):
        return {'smoothness': self.smoothness}

    def sdf(self, points):
        points = np.asarray(points)
        k = self.smoothness
        result = None
        for center, radius in self.LOBES:
            d = np.linalg.norm(points - np.asarray(center), axis=-1) - radius
            if result is None:
                result = d
                continue
            # Polynomial smooth minimum
            h = np.clip(0.5 + 0.5 * (d - result) / k, 0.0, 1.0)
            result = d * (1 - h) + result * h - k * h * (1 - h)
        return result


SHAPES: dict[str, type[AnalyticShape]] = {
    cls.name: cls for cls in (Sphere, Torus, Box, Dumbbell, BentCylinder, Blob)
}


def shape_from_spec(spec: str) -> AnalyticShape:
    """Parses "name" or "name:key=value,key=value", e.g. "torus:major=0.25,minor=0.1"."""
    name, _, arguments = spec.strip().partition(':')
    if name not in SHAPES:
        raise InvalidArgument(f'Unknown shape "{name}"; choose from {sorted(SHAPES)}')
    kwargs = {}
    for item in filter(None, arguments.split(',')):
        key, sep, value = item.partition('=')
        if not sep:
            raise InvalidArgument(f'Bad shape argument "{item}" in "{spec}"')
        try:
            kwargs[key.strip()] = float(value)
        except ValueError as e:
            raise InvalidArgument(f'Bad shape argument "{item}" in "{spec}"') from e
    try:
        return SHAPES[name](**kwargs)
    except TypeError as e:
        raise InvalidArgument(f'Bad arguments for {name}: {e}') from e


def angular_segments(points: np.ndarray, count: int) -> np.ndarray:
    """Labels points 0..count-1 by azimuth sector around the z axis."""
    azimuth = np.arctan2(points[:, 1], points[:, 0]) + math.pi
    return np.minimum((azimuth / (2 * math.pi / count)).astype(np.int64), count - 1)


class AnalyticField:
    def __init__(self, shape: AnalyticShape, centers: np.ndarray, closure: float = 0.05,
                 normalization: Normalization = Normalization()):
        """An exact implicit field with region centers, interchangeable with a trained model for extraction."""
        self.shape = shape
        self.centers = np.asarray(centers, dtype=np.float64)
        self.closure = closure
        self.normalization = normalization
        self.half_extent = REFERENCE_HALF_EXTENT
        self._center_index = SpatialIndex(self.centers)

    def sdf(self, nodes: np.ndarray) -> np.ndarray:
        return self.shape.normalized_sdf(self.normalization)(nodes)

    def closure_sdf(self, nodes: np.ndarray) -> np.ndarray:
        return np.full(len(nodes), self.closure)

    def cell_index(self, nodes: np.ndarray) -> np.ndarray:
        return self._center_index.query(nodes)[0]
