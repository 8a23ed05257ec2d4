"""
Isosurface extraction and mesh file I/O.
"""
import logging
from pathlib import Path

import numpy as np
import trimesh
from skimage import measure

from errors import EmptyMesh, MalformedFile, NumericalError
from models import Normalization, ScalarGrid, TriangleMesh

__all__ = ['marching_cubes', 'to_trimesh', 'write_obj', 'read_obj']

logger = logging.getLogger(__name__)

# Grid values exactly on the isolevel are nudged off it
ZERO_NUDGE = 1e-10
MIN_TRIANGLE_AREA = 1e-12


def marching_cubes(grid: ScalarGrid, iso: float = 0.0, part_id: int | None = None) -> TriangleMesh:
    """Triangulates the `iso` level set of the grid, oriented so normals point towards increasing values."""
    values = grid.values
    if not np.isfinite(values).all():
        raise NumericalError('Grid contains non-finite values')
    values = np.where(values == iso, iso + ZERO_NUDGE, values)
    if values.min() > iso or values.max() < iso:
        raise EmptyMesh(f'No {iso} crossing in the grid (range {values.min():.4g}..{values.max():.4g})')

    vertices, faces, _, _ = measure.marching_cubes(
        values,
        level=iso,
        spacing=tuple(float(s) for s in grid.spacing),
        gradient_direction='ascent',
        allow_degenerate=False
    )
    mesh = TriangleMesh(vertices.astype(np.float64) + grid.bounds_min, faces.astype(np.int64), part_id)

    slivers = mesh.face_areas() <= MIN_TRIANGLE_AREA
    if slivers.any():
        logger.debug(f'Dropping {int(slivers.sum())} near-zero-area triangles')
        mesh = _compact(TriangleMesh(mesh.vertices, mesh.triangles[~slivers], part_id))
    if mesh.is_empty:
        raise EmptyMesh('Marching cubes produced no triangles')
    return mesh


def _compact(mesh: TriangleMesh) -> TriangleMesh:
    """Removes vertices no triangle references."""
    used, inverse = np.unique(mesh.triangles, return_inverse=True)
    return TriangleMesh(mesh.vertices[used], inverse.reshape(-1, 3).astype(np.int64), mesh.part_id)


def to_trimesh(mesh: TriangleMesh) -> trimesh.Trimesh:
    return trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)


def write_obj(mesh: TriangleMesh, path: str | Path, normalization: Normalization | None = None) -> None:
    """Writes an ASCII OBJ ("v x y z" / 1-based "f i j k") in shape units."""
    vertices = mesh.vertices if normalization is None else normalization.invert(mesh.vertices)
    lines = [f'v {x:.17g} {y:.17g} {z:.17g}' for x, y, z in vertices]
    lines += [f'f {i + 1} {j + 1} {k + 1}' for i, j, k in mesh.triangles]
    Path(path).write_text('\n'.join(lines) + ('\n' if lines else ''))


def read_obj(path: str | Path, normalization: Normalization | None = None) -> TriangleMesh:
    """Reads a triangle mesh from an OBJ file, mapping it into the normalized box if given."""
    path = Path(path)
    if not path.is_file():
        raise MalformedFile(f'{path}: no such file')
    try:
        loaded = trimesh.load(path, file_type='obj', process=False, force='mesh')
    except Exception as e:
        raise MalformedFile(f'{path}: {e}') from e
    if not isinstance(loaded, trimesh.Trimesh) or len(loaded.faces) == 0:
        raise MalformedFile(f'{path}: no triangles found')

    vertices = np.asarray(loaded.vertices, dtype=np.float64)
    if normalization is not None:
        vertices = normalization.apply(vertices)
    return TriangleMesh(vertices, np.asarray(loaded.faces, dtype=np.int64))
