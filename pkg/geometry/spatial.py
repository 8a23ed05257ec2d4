"""
Nearest-neighbour queries over point sets.

Wraps `scipy.spatial.cKDTree` and pins the tie rule: among equidistant points the
lowest index wins, so results match an exhaustive scan.
"""
import numpy as np
from scipy.spatial import cKDTree

__all__ = ['SpatialIndex', 'nearest_point', 'knn_indices']

# Extra neighbours fetched so that exact ties can be resolved by index
TIE_SLACK = 4
# Relative widening of ball queries so that rounding never drops a tied point
RADIUS_SLACK = 1e-12


class SpatialIndex:
    def __init__(self, points: np.ndarray):
        """Balanced k-d tree over a fixed set of 3D points."""
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self.tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (indices, distances) of the nearest point to each query."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(queries) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)

        k = min(len(self.points), 1 + TIE_SLACK)
        dist, idx = self.tree.query(queries, k=k)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]

        # Among candidates at the minimum distance, take the lowest index
        tied = dist == dist[:, :1]
        choice = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1).astype(np.int64)
        if k < len(self.points):
            # Every fetched candidate tied: the tie may run past the window
            for row in np.flatnonzero(tied[:, -1]):
                choice[row] = self._lowest_within(queries[row], dist[row, 0])
        distances = np.linalg.norm(self.points[choice] - queries, axis=1)
        return choice, distances

    def _lowest_within(self, q: np.ndarray, radius: float) -> int:
        """The lowest index among all points nearest to q, which lie within radius."""
        candidates = np.asarray(self.tree.query_ball_point(q, r=radius * (1 + RADIUS_SLACK)), dtype=np.int64)
        gaps = np.linalg.norm(self.points[candidates] - q, axis=1)
        return int(candidates[gaps == gaps.min()].min())


def nearest_point(index: SpatialIndex, q) -> tuple[int, float]:
    """The nearest indexed point to a single position."""
    idx, dist = index.query(np.asarray(q, dtype=np.float64)[None, :])
    return int(idx[0]), float(dist[0])


def _ball_neighbours(tree: cKDTree, points: np.ndarray, row: int, radius: float,
                     k: int) -> tuple[np.ndarray, np.ndarray]:
    candidates = np.asarray(tree.query_ball_point(points[row], r=radius * (1 + RADIUS_SLACK)), dtype=np.int64)
    candidates = candidates[candidates != row]
    gaps = np.linalg.norm(points[candidates] - points[row], axis=1)
    order = np.lexsort((candidates, gaps))[:k]
    return candidates[order], gaps[order]


def knn_indices(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The k nearest other points of every point, ordered by (distance, index).

    Returns (indices, distances), each of shape (N, k).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k_query = min(n, k + 1 + TIE_SLACK)
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k_query)

    # Drop each point itself, then order candidates by distance with index as tie-break
    dist = np.where(idx == np.arange(n)[:, None], np.inf, dist)
    order = np.lexsort((idx, dist), axis=-1)[:, :k]
    indices = np.take_along_axis(idx, order, axis=1).astype(np.int64)
    distances = np.take_along_axis(dist, order, axis=1)

    if k_query < n:
        # The k-th neighbour ties with the farthest fetched candidate: rescan every point within reach
        farthest = np.where(np.isinf(dist), -np.inf, dist).max(axis=1)
        for row in np.flatnonzero(distances[:, -1] >= farthest):
            indices[row], distances[row] = _ball_neighbours(tree, points, row, distances[row, -1], k)
    return indices, distances
