"""
Geodesic distances on the surface, approximated by shortest paths over a
symmetrized kNN graph with Euclidean edge weights.

Tables are stored as little-endian binary: magic "LPIG", u32 I, u32 N, u32 knn_k,
then I*N float64 values, row-major.
"""
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from errors import CorruptCheckpoint, DisconnectedGraph, InvalidArgument
from models import GeodesicTable, PointCloud, RegionCenters
from .spatial import knn_indices

__all__ = ['build_knn_graph', 'build_geodesic_table', 'write_geodesic_table', 'read_geodesic_table']

logger = logging.getLogger(__name__)

GEODESIC_MAGIC = b'LPIG'
GEODESIC_HEADER = struct.Struct('<4sIII')
DEFAULT_KNN_K = 10

# Dijkstra rows handled per parallel job
CENTERS_PER_JOB = 16


def build_knn_graph(points: np.ndarray, knn_k: int) -> csr_matrix:
    """Undirected kNN graph: i and j are joined if either is among the other's k nearest."""
    n = len(points)
    if not 1 <= knn_k < n:
        raise InvalidArgument(f'knn_k must lie in [1, {n - 1}], got {knn_k}')

    neighbours, distances = knn_indices(points, knn_k)
    # Coincident points would give zero weights, which sparse graphs treat as missing edges
    weights = np.maximum(distances.ravel(), np.finfo(np.float64).tiny)
    rows = np.repeat(np.arange(n), knn_k)
    graph = csr_matrix((weights, (rows, neighbours.ravel())), shape=(n, n))
    return graph.maximum(graph.T).tocsr()


def build_geodesic_table(cloud: PointCloud, centers: RegionCenters, knn_k: int = DEFAULT_KNN_K,
                         n_jobs: int | None = None) -> GeodesicTable:
    """Shortest-path distances from every region center to every cloud point."""
    if knn_k < 3:
        logger.warning(f'knn_k={knn_k} gives a sparse graph; geodesics may be poor')

    graph = build_knn_graph(cloud.points, knn_k)
    n_components, labels = connected_components(graph, directed=False)
    if n_components > 1:
        sizes = sorted(np.bincount(labels).tolist(), reverse=True)
        raise DisconnectedGraph(sizes, knn_k)

    chunks = [centers.source_indices[i:i + CENTERS_PER_JOB]
              for i in range(0, len(centers), CENTERS_PER_JOB)]
    # Rows come back in submission order, so the table does not depend on the worker count
    rows = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(dijkstra)(graph, directed=False, indices=chunk) for chunk in chunks
    )
    dist = np.vstack(rows)
    logger.info(f'Built geodesic table for {len(centers)} centers over {len(cloud)} points (k={knn_k})')
    return GeodesicTable(dist=dist, knn_k=knn_k)


def write_geodesic_table(table: GeodesicTable, path: str | Path) -> None:
    """Writes a geodesic table atomically."""
    path = Path(path)
    n_centers, n_points = table.shape
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as stream:
            stream.write(GEODESIC_HEADER.pack(GEODESIC_MAGIC, n_centers, n_points, table.knn_k))
            stream.write(np.ascontiguousarray(table.dist, dtype='<f8').tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        Path(tmp_path).unlink(missing_ok=True)
        raise


def read_geodesic_table(path: str | Path) -> GeodesicTable:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CorruptCheckpoint(f'Cannot read geodesic table {path}: {e}') from e
    if len(data) < GEODESIC_HEADER.size:
        raise CorruptCheckpoint(f'{path}: truncated geodesic table')
    magic, n_centers, n_points, knn_k = GEODESIC_HEADER.unpack_from(data)
    if magic != GEODESIC_MAGIC:
        raise CorruptCheckpoint(f'{path}: bad magic {magic!r}')
    body = data[GEODESIC_HEADER.size:]
    if len(body) != n_centers * n_points * 8:
        raise CorruptCheckpoint(f'{path}: expected {n_centers}x{n_points} table')
    dist = np.frombuffer(body, dtype='<f8').reshape(n_centers, n_points).astype(np.float64)
    return GeodesicTable(dist=dist, knn_k=knn_k)
