"""
Shape abstraction: every part replaced by its convex hull.
"""
import logging

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from errors import DegeneratePart
from models import HullMesh, MeshBundle, TriangleMesh

__all__ = ['convex_hull', 'bounding_tetrahedron', 'abstract_hulls']

logger = logging.getLogger(__name__)

# Relative singular value below which a point set counts as flat
FLATNESS_TOLERANCE = 1e-12


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    interior = vertices.mean(axis=0)
    tri = vertices[triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    inward = np.einsum('ij,ij->i', normals, tri.mean(axis=1) - interior) < 0
    triangles = triangles.copy()
    triangles[inward] = triangles[inward][:, ::-1]
    return triangles


def convex_hull(points: np.ndarray, part_id: int | None = None) -> TriangleMesh:
    """Triangulated convex hull with outward facets, built only from input vertices."""
    points = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(points) < 4:
        raise DegeneratePart(f'Part {part_id} has {len(points)} distinct vertices')
    centred = points - points.mean(axis=0)
    singular = np.linalg.svd(centred, compute_uv=False)
    if singular[-1] <= FLATNESS_TOLERANCE * max(singular[0], 1.0):
        raise DegeneratePart(f'Part {part_id} is flat')

    try:
        hull = ConvexHull(points)
    except QhullError as e:
        raise DegeneratePart(f'Qhull failed on part {part_id}: {e}') from e

    used, inverse = np.unique(hull.simplices, return_inverse=True)
    vertices = points[used]
    triangles = _orient_outward(vertices, inverse.reshape(-1, 3).astype(np.int64))
    return TriangleMesh(vertices, triangles, part_id)


def bounding_tetrahedron(points: np.ndarray, part_id: int | None = None) -> TriangleMesh:
    """A tetrahedron enclosing the points' bounding box."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo = points.min(axis=0) if len(points) else np.zeros(3)
    hi = points.max(axis=0) if len(points) else np.zeros(3)
    size = 3.0 * max(float((hi - lo).max()), 1e-3)
    vertices = np.vstack([lo, lo + [size, 0, 0], lo + [0, size, 0], lo + [0, 0, size]])
    triangles = _orient_outward(vertices, np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]))
    return TriangleMesh(vertices, triangles, part_id)


def abstract_hulls(bundle: MeshBundle) -> list[HullMesh]:
    """One convex hull per non-empty part, in part order."""
    hulls = []
    for part_id, part in sorted(bundle.parts.items()):
        if part.is_empty:
            logger.warning(f'Part {part_id} is empty, no hull emitted')
            continue
        try:
            hulls.append(HullMesh(convex_hull(part.vertices, part_id)))
        except DegeneratePart as e:
            logger.warning(f'{e}; emitting a bounding tetrahedron instead')
            hulls.append(HullMesh(bounding_tetrahedron(part.vertices, part_id), degenerate=True))
    bundle.hulls = hulls
    logger.info(f'Built {len(hulls)} convex hulls')
    return hulls
