"""
Regular sampling of an implicit field.
"""
import logging

import numpy as np

from errors import InvalidArgument
from models import ScalarGrid
from .field import ImplicitField

__all__ = ['evaluate_grid', 'empty_grid']

logger = logging.getLogger(__name__)


def empty_grid(resolution: int, half_extent: float) -> ScalarGrid:
    """A zero-valued grid over the cube [-half_extent, half_extent]^3."""
    if resolution < 2:
        raise InvalidArgument(f'Grid resolution must be at least 2, got {resolution}')
    lo = np.full(3, -half_extent)
    return ScalarGrid(resolution, lo, -lo, np.zeros((resolution,) * 3))


def evaluate_grid(field: ImplicitField, resolution: int) -> ScalarGrid:
    """Signed distances of the field at every node of a resolution^3 grid."""
    grid = empty_grid(resolution, field.half_extent)
    grid.values = np.asarray(field.sdf(grid.nodes()), dtype=np.float64).reshape((resolution,) * 3)
    logger.info(f'Evaluated {resolution}^3 grid, values in [{grid.values.min():.4g}, {grid.values.max():.4g}]')
    return grid
