"""
Per-part meshes: nodes outside a part's cell use the closure field, so each part
comes out as its own closed surface.
"""
import logging

import numpy as np

from errors import EmptyMesh, InvalidArgument
from geometry.sampling import fps_indices
from geometry.spatial import SpatialIndex
from models import MeshBundle, ScalarGrid, TriangleMesh
from .field import ImplicitField
from .grid import evaluate_grid
from .surface import marching_cubes

__all__ = ['PartExtractor', 'extract_part', 'merge_centers', 'relevel']

logger = logging.getLogger(__name__)


def merge_centers(centers: np.ndarray, count: int) -> np.ndarray:
    """Maps every center to the nearest of `count` centers kept by FPS.

    The result holds, for each original center, the original index of its kept center.
    """
    n = len(centers)
    if not 1 <= count <= n:
        raise InvalidArgument(f'Level must lie in [1, {n}], got {count}')
    kept = fps_indices(centers, count)
    nearest, _ = SpatialIndex(centers[kept]).query(centers)
    return kept[nearest]


class PartExtractor:
    def __init__(self, field: ImplicitField, resolution: int, grid: ScalarGrid | None = None):
        """Shares one field grid, one closure grid and one cell lookup between all parts."""
        self.field = field
        self.grid = grid if grid is not None else evaluate_grid(field, resolution)
        nodes = self.grid.nodes()
        self.cells = np.asarray(field.cell_index(nodes), dtype=np.int64).reshape(self.grid.values.shape)
        self._closure: np.ndarray | None = None
        self._nodes = nodes

    @property
    def n_centers(self) -> int:
        return len(self.field.centers)

    def _closure_values(self) -> np.ndarray:
        if self._closure is None:
            closure = self.field.closure_sdf(self._nodes)
            self._closure = np.asarray(closure, dtype=np.float64).reshape(self.grid.values.shape)
        return self._closure

    def global_mesh(self) -> TriangleMesh:
        return marching_cubes(self.grid)

    def part(self, index: int, assignment: np.ndarray | None = None) -> TriangleMesh:
        """The mesh of the cell of center `index`; with `assignment`, of all centers merged into it."""
        if not 0 <= index < self.n_centers:
            raise InvalidArgument(f'Center index must lie in [0, {self.n_centers}), got {index}')
        cells = self.cells if assignment is None else assignment[self.cells]
        inside = cells == index
        if inside.all():
            values = self.grid.values
        else:
            values = np.where(inside, self.grid.values, self._closure_values())
        part_grid = ScalarGrid(self.grid.resolution, self.grid.bounds_min, self.grid.bounds_max, values)
        try:
            return marching_cubes(part_grid, part_id=index)
        except EmptyMesh as e:
            raise EmptyMesh(f'Part {index} has no surface: {e}') from e

    def parts(self, assignment: np.ndarray | None = None) -> dict[int, TriangleMesh]:
        """Meshes of every active part; parts without a surface come back empty."""
        active = range(self.n_centers) if assignment is None else np.unique(assignment).tolist()
        meshes = {}
        for index in active:
            try:
                meshes[index] = self.part(index, assignment)
            except EmptyMesh as e:
                logger.warning(str(e))
                meshes[index] = TriangleMesh.empty(index)
        logger.info(f'Extracted {sum(not m.is_empty for m in meshes.values())}/{len(meshes)} part meshes')
        return meshes

    def bundle(self, level: int | None = None, provenance: dict | None = None) -> MeshBundle:
        """Global mesh plus one part per center, or per merged cell when `level` is given."""
        assignment = None if level is None else merge_centers(self.field.centers, level)
        provenance = dict(provenance or {})
        provenance.update(resolution=self.grid.resolution, level=level or self.n_centers)
        return MeshBundle(self.global_mesh(), self.parts(assignment), provenance=provenance)


def extract_part(field: ImplicitField, index: int, resolution: int) -> TriangleMesh:
    return PartExtractor(field, resolution).part(index)


def relevel(field: ImplicitField, level: int, resolution: int, grid: ScalarGrid | None = None) -> MeshBundle:
    """Reconstructs the shape with `level` parts by merging region cells."""
    return PartExtractor(field, resolution, grid).bundle(level)
