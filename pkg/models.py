"""
Common data models and classes used throughout the application.
"""
from dataclasses import dataclass, field
from enum import Enum
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np

from errors import InvalidArgument

__all__ = [
    'Normalization', 'PointCloud', 'RegionCenters', 'GeodesicTable', 'AffinityMode', 'AffinityConfig',
    'NetConfig', 'LossMode', 'ClosureMode', 'TrainConfig', 'QuerySet', 'ScalarGrid', 'TriangleMesh', 'HullMesh',
    'MeshBundle', 'SampledSurface'
]


# Maps shape units to the normalized box: normalized = (points - offset) / scale
@dataclass(frozen=True)
class Normalization:
    scale: float = 1.0
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.offset)) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.offset)

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and not any(self.offset)


@dataclass
class PointCloud:
    points: np.ndarray
    segment_labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise InvalidArgument(f'Expected an (N, 3) array of points, got shape {self.points.shape}')
        if len(self.points) < 4:
            raise InvalidArgument(f'A point cloud needs at least 4 points, got {len(self.points)}')
        if not np.isfinite(self.points).all():
            raise InvalidArgument('Point cloud contains non-finite coordinates')

        if self.segment_labels is not None:
            labels = np.asarray(self.segment_labels)
            if labels.shape != (len(self.points),):
                raise InvalidArgument(f'{labels.shape[0]} segment labels given for {len(self.points)} points')
            if not np.issubdtype(labels.dtype, np.integer):
                if not np.array_equal(labels, np.round(labels)):
                    raise InvalidArgument('Segment labels must be integers')
            labels = labels.astype(np.int64)
            # Labels must form the contiguous range 0..S-1
            if labels.min() != 0 or not np.array_equal(np.unique(labels), np.arange(labels.max() + 1)):
                raise InvalidArgument('Segment labels must cover the contiguous range 0..S-1')
            self.segment_labels = labels

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_segments(self) -> int:
        return 0 if self.segment_labels is None else int(self.segment_labels.max()) + 1


@dataclass
class RegionCenters:
    centers: np.ndarray
    source_indices: np.ndarray

    @classmethod
    def from_indices(cls, cloud: PointCloud, indices) -> Self:
        """Creates the centers located at the given cloud points."""
        indices = np.asarray(indices, dtype=np.int64)
        return cls(centers=cloud.points[indices].copy(), source_indices=indices)

    def __len__(self) -> int:
        return len(self.source_indices)


@dataclass
class GeodesicTable:
    dist: np.ndarray  # (I, N) graph-geodesic distances from each center
    knn_k: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.dist.shape


# How a query is related to the surface codes
class AffinityMode(Enum):
    EUCLIDEAN = 'euclidean'
    INTRINSIC = 'intrinsic'
    SEMANTIC = 'semantic'
    AVERAGE = 'average'
    NEAREST = 'nearest'


@dataclass(frozen=True)
class AffinityConfig:
    mode: AffinityMode = AffinityMode.EUCLIDEAN
    sigma: float = 1.0
    semantic_own_weight: float = 0.8

    def validate(self, n_segments: int = 0) -> None:
        if self.mode in (AffinityMode.EUCLIDEAN, AffinityMode.INTRINSIC) and not self.sigma > 0:
            raise InvalidArgument(f'sigma must be positive, got {self.sigma}')
        if self.mode == AffinityMode.SEMANTIC:
            if n_segments < 2:
                raise InvalidArgument(f'Semantic affinity needs at least 2 segments, got {n_segments}')
            if not 1.0 / n_segments < self.semantic_own_weight < 1.0:
                raise InvalidArgument(
                    f'own weight must lie in (1/{n_segments}, 1), got {self.semantic_own_weight}'
                )


@dataclass(frozen=True)
class NetConfig:
    latent_dim: int = 100
    hidden_width: int = 256
    n_layers: int = 8
    skip_layer: int = 4  # 0 disables the skip connection
    softplus_beta: float = 100.0
    init_radius: float = 0.3


# Which objective to optimise
class LossMode(Enum):
    PULLING = 'pulling'
    MSE = 'mse'


# What a part's field takes outside its own cell
class ClosureMode(Enum):
    CONSTANT = 'constant'
    UNSEEN = 'unseen'


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 512
    learning_rate: float = 1e-4
    loss: LossMode = LossMode.PULLING
    queries_per_point: int = 20
    noise_k: int = 50
    seed: int = 0
    log_every: int = 100
    debug: bool = False

    def __post_init__(self):
        for name in ('batch_size', 'queries_per_point', 'noise_k', 'log_every'):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f'{name} must be positive, got {getattr(self, name)}')
        if self.steps < 0:
            raise InvalidArgument(f'steps must be non-negative, got {self.steps}')
        if not self.learning_rate > 0:
            raise InvalidArgument(f'learning_rate must be positive, got {self.learning_rate}')


@dataclass
class QuerySet:
    queries: np.ndarray  # (Q, 3)
    affinities: np.ndarray  # (Q, I)
    parents: np.ndarray  # (Q,) index of the surface point each query was drawn around
    gt_sdf: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.queries)

    def subset(self, indices: np.ndarray) -> Self:
        return QuerySet(
            queries=self.queries[indices],
            affinities=self.affinities[indices],
            parents=self.parents[indices],
            gt_sdf=None if self.gt_sdf is None else self.gt_sdf[indices]
        )


@dataclass
class ScalarGrid:
    resolution: int
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    values: np.ndarray  # (R, R, R), indexed [x, y, z]

    @property
    def spacing(self) -> np.ndarray:
        return (self.bounds_max - self.bounds_min) / (self.resolution - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, self.resolution) for lo, hi in zip(self.bounds_min, self.bounds_max)]

    def nodes(self) -> np.ndarray:
        """All grid node positions, flattened in the same order as `values.ravel()`."""
        xs, ys, zs = np.meshgrid(*self.axes(), indexing='ij')
        return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    part_id: int | None = None

    @classmethod
    def empty(cls, part_id: int | None = None) -> Self:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), part_id)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas().sum())


@dataclass
class HullMesh:
    mesh: TriangleMesh
    degenerate: bool = False  # True when the bounding-tetrahedron fallback was emitted

    @property
    def part_id(self) -> int | None:
        return self.mesh.part_id


@dataclass
class MeshBundle:
    global_mesh: TriangleMesh
    parts: dict[int, TriangleMesh]
    hulls: list[HullMesh] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


@dataclass
class SampledSurface:
    points: np.ndarray
    normals: np.ndarray
    source: str = ''

    def __len__(self) -> int:
        return len(self.points)
