"""
Region center selection on point clouds.
"""
import logging

import numpy as np

from errors import InvalidArgument
from models import PointCloud, RegionCenters

__all__ = ['farthest_point_sample', 'fps_indices', 'segment_centers']

logger = logging.getLogger(__name__)


def fps_indices(points: np.ndarray, count: int, seed: int = 0) -> np.ndarray:
    """Greedy farthest point sampling over an (N, 3) array.

    The first pick is the point nearest the centroid when `seed` is 0, otherwise
    index `seed mod N`. Ties are broken by lowest index.
    """
    n = len(points)
    if not 1 <= count <= n:
        raise InvalidArgument(f'Cannot sample {count} centers from {n} points')

    if seed == 0:
        start = int(np.argmin(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    else:
        start = seed % n

    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    min_dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, count):
        # np.argmax returns the first maximum, i.e. the lowest index
        nxt = int(np.argmax(min_dist))
        if min_dist[nxt] == 0.0:
            raise InvalidArgument(f'Only {i} distinct points available, {count} centers requested')
        chosen[i] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def farthest_point_sample(cloud: PointCloud, count: int, seed: int = 0) -> RegionCenters:
    """Selects `count` region centers on the cloud with farthest point sampling."""
    indices = fps_indices(cloud.points, count, seed)
    logger.info(f'Sampled {count} region centers with FPS')
    return RegionCenters.from_indices(cloud, indices)


def segment_centers(cloud: PointCloud) -> RegionCenters:
    """One representative point per segment: the segment point nearest the segment centroid."""
    if cloud.segment_labels is None:
        raise InvalidArgument('Cloud has no segment labels')

    indices = []
    for label in range(cloud.n_segments):
        members = np.flatnonzero(cloud.segment_labels == label)
        pts = cloud.points[members]
        indices.append(members[int(np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))])
    return RegionCenters.from_indices(cloud, indices)
