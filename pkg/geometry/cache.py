"""
diskcache wrapper for geodesic tables
"""
import hashlib
import logging
from pathlib import Path
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from diskcache import Cache

from models import GeodesicTable, PointCloud, RegionCenters
from .geodesic import build_geodesic_table

__all__ = ['GeodesicCache']

logger = logging.getLogger(__name__)


# Tables past this many bytes on disk evict the least recently used ones
DEFAULT_SIZE_LIMIT = 1_000_000_000


class GeodesicCache:
    def __init__(self, directory: str | Path, size_limit: int = DEFAULT_SIZE_LIMIT):
        """Geodesic tables on disk, keyed by the cloud, its center indices and the graph degree."""
        self._cache = Cache(str(directory), size_limit=size_limit, eviction_policy='least-recently-used')

    def __enter__(self) -> Self:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    @staticmethod
    def _hash_inputs(cloud: PointCloud, centers: RegionCenters, knn_k: int) -> str:
        """Returns the hash of everything the table depends on."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(cloud.points, dtype='<f8').tobytes())
        digest.update(np.ascontiguousarray(centers.source_indices, dtype='<i8').tobytes())
        digest.update(str(knn_k).encode())
        return digest.hexdigest()

    def get(self, cloud: PointCloud, centers: RegionCenters, knn_k: int, n_jobs: int | None = None) -> GeodesicTable:
        """Returns the cached table, building and storing it on a miss."""
        key = self._hash_inputs(cloud, centers, knn_k)
        cached = self._cache.get(key)
        if cached is not None:
            logger.info('Geodesic table loaded from cache')
            return GeodesicTable(dist=cached, knn_k=knn_k)

        table = build_geodesic_table(cloud, centers, knn_k, n_jobs=n_jobs)
        self._cache[key] = table.dist
        return table

    def close(self) -> None:
        self._cache.close()
