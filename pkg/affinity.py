"""
Affinity vectors: how strongly each query relates to each surface code.

All functions are vectorised over a leading batch axis: queries of shape (Q, 3)
produce distances/affinities of shape (Q, I).
"""
import logging

import numpy as np

from errors import InvalidArgument
from geometry.spatial import SpatialIndex
from models import AffinityConfig, AffinityMode, GeodesicTable, PointCloud, RegionCenters

__all__ = [
    'euclid_dist', 'intrinsic_dist', 'gaussian_normalize', 'semantic_affinity', 'ablation_affinity',
    'AffinityEngine'
]

logger = logging.getLogger(__name__)

# Queries processed per block, bounds the (Q, I) temporaries
CHUNK_SIZE = 65536


def _as_queries(q) -> np.ndarray:
    return np.asarray(q, dtype=np.float64).reshape(-1, 3)


def euclid_dist(q, centers: RegionCenters) -> np.ndarray:
    """Distance from each query to each region center."""
    q = _as_queries(q)
    return np.linalg.norm(q[:, None, :] - centers.centers[None, :, :], axis=-1)


def intrinsic_dist(q, index: SpatialIndex, table: GeodesicTable) -> np.ndarray:
    """Distance to the nearest surface point plus the geodesic from there to each center."""
    nearest, offset = index.query(_as_queries(q))
    return offset[:, None] + table.dist[:, nearest].T


def gaussian_normalize(d: np.ndarray, sigma: float) -> np.ndarray:
    """Normalized exp(-d / sigma) along the last axis."""
    d = np.asarray(d, dtype=np.float64)
    # Shifting by the minimum keeps the largest term at exp(0)
    weights = np.exp(-(d - d.min(axis=-1, keepdims=True)) / sigma)
    return weights / weights.sum(axis=-1, keepdims=True)


def semantic_affinity(q, labels: np.ndarray, index: SpatialIndex, n_segments: int, own_weight: float) -> np.ndarray:
    """`own_weight` on the segment of the nearest labelled point, the rest spread evenly."""
    if n_segments < 2:
        raise InvalidArgument(f'Semantic affinity needs at least 2 segments, got {n_segments}')
    nearest, _ = index.query(_as_queries(q))
    a = np.full((len(nearest), n_segments), (1.0 - own_weight) / (n_segments - 1))
    a[np.arange(len(nearest)), labels[nearest]] = own_weight
    return a


def ablation_affinity(q, centers: RegionCenters, mode: AffinityMode) -> np.ndarray:
    """The distance-free baselines: uniform weights, or one-hot on the nearest center."""
    q = _as_queries(q)
    n_centers = len(centers)
    if mode == AffinityMode.AVERAGE:
        return np.full((len(q), n_centers), 1.0 / n_centers)
    if mode == AffinityMode.NEAREST:
        # argmin returns the first minimum, i.e. the lowest index on ties
        nearest = np.argmin(euclid_dist(q, centers), axis=1)
        a = np.zeros((len(q), n_centers))
        a[np.arange(len(q)), nearest] = 1.0
        return a
    raise InvalidArgument(f'{mode} is not an ablation mode')


class AffinityEngine:
    def __init__(
            self,
            config: AffinityConfig,
            cloud: PointCloud,
            centers: RegionCenters,
            table: GeodesicTable | None = None,
            labeled: PointCloud | None = None
    ):
        """Computes affinity vectors for arbitrary queries; shared by training and reconstruction.

        Semantic affinities follow the segment labels of `labeled`, a sparse labelled
        cloud in the same normalized frame; without one the labels of `cloud` are used.
        """
        self.config = config
        self.cloud = cloud
        self.centers = centers
        self.table = table
        self.labeled = cloud if labeled is None else labeled
        if labeled is not None and labeled.segment_labels is None:
            raise InvalidArgument('The labelled cloud carries no segment labels')

        config.validate(self.labeled.n_segments)
        if config.mode == AffinityMode.INTRINSIC and table is None:
            raise InvalidArgument('Intrinsic affinity needs a geodesic table')
        if table is not None and table.shape != (len(centers), len(cloud)):
            raise InvalidArgument(f'Geodesic table shape {table.shape} does not match '
                                  f'{len(centers)} centers x {len(cloud)} points')
        if config.mode == AffinityMode.SEMANTIC and len(centers) != self.labeled.n_segments:
            raise InvalidArgument(f'Semantic affinity uses one code per segment: '
                                  f'{len(centers)} centers for {self.labeled.n_segments} segments')

        self.surface_index = SpatialIndex(cloud.points)
        self.label_index = self.surface_index if labeled is None else SpatialIndex(labeled.points)
        self.center_index = SpatialIndex(centers.centers)

    @property
    def n_codes(self) -> int:
        return len(self.centers)

    def _compute_chunk(self, q: np.ndarray) -> np.ndarray:
        mode = self.config.mode
        if mode == AffinityMode.EUCLIDEAN:
            return gaussian_normalize(euclid_dist(q, self.centers), self.config.sigma)
        if mode == AffinityMode.INTRINSIC:
            return gaussian_normalize(intrinsic_dist(q, self.surface_index, self.table), self.config.sigma)
        if mode == AffinityMode.SEMANTIC:
            return semantic_affinity(q, self.labeled.segment_labels, self.label_index,
                                     self.labeled.n_segments, self.config.semantic_own_weight)
        return ablation_affinity(q, self.centers, mode)

    def compute(self, queries) -> np.ndarray:
        """Affinity vectors (Q, I) for a batch of queries."""
        queries = _as_queries(queries)
        if len(queries) == 0:
            return np.zeros((0, self.n_codes))
        return np.concatenate([self._compute_chunk(queries[i:i + CHUNK_SIZE])
                               for i in range(0, len(queries), CHUNK_SIZE)])

    def cell_index(self, queries) -> np.ndarray:
        """The part each query falls in: its nearest center, or its nearest labelled point's segment."""
        queries = _as_queries(queries)
        if self.config.mode == AffinityMode.SEMANTIC:
            nearest, _ = self.label_index.query(queries)
            return self.labeled.segment_labels[nearest]
        return self.center_index.query(queries)[0]
