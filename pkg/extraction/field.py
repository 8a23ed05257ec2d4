"""
Implicit fields that can be meshed: a trained checkpoint, or anything with the same surface.
"""
import logging
from typing import Protocol

import numpy as np
import torch
from joblib import Parallel, delayed

from checkpoint import Checkpoint
from errors import InvalidArgument
from models import ClosureMode, Normalization
from network import DTYPE

__all__ = ['ImplicitField', 'NeuralField', 'grid_half_extent']

logger = logging.getLogger(__name__)

# Normalized shapes live in [-0.5, 0.5]^3; grids extend 10% past it
DEFAULT_HALF_EXTENT = 0.55
CLOUD_MARGIN = 1.1
# Distance assigned outside a part's cell in the constant closure mode
CLOSURE_DISTANCE = 0.05
CHUNK_SIZE = 32768


class ImplicitField(Protocol):
    centers: np.ndarray
    normalization: Normalization
    half_extent: float

    def sdf(self, nodes: np.ndarray) -> np.ndarray:
        ...

    def closure_sdf(self, nodes: np.ndarray) -> np.ndarray:
        ...

    def cell_index(self, nodes: np.ndarray) -> np.ndarray:
        ...


def grid_half_extent(points: np.ndarray) -> float:
    """Half side of a centred cube holding the points with a 10% margin, at least 0.55."""
    return max(DEFAULT_HALF_EXTENT, CLOUD_MARGIN * float(np.abs(points).max()))


class NeuralField:
    def __init__(self, checkpoint: Checkpoint, closure: ClosureMode | str = ClosureMode.CONSTANT,
                 n_jobs: int | None = None):
        """Evaluates a checkpoint's network with the affinities of its own mode."""
        try:
            self.closure = ClosureMode(closure)
        except ValueError as e:
            choices = [mode.value for mode in ClosureMode]
            raise InvalidArgument(f'Unknown closure mode "{closure}"; choose from {choices}') from e
        self.checkpoint = checkpoint
        self.n_jobs = n_jobs
        self.engine = checkpoint.affinity_engine()
        self.centers = checkpoint.centers.centers
        self.normalization = checkpoint.normalization
        self.half_extent = grid_half_extent(checkpoint.cloud.points)

    def _chunked(self, fn, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 3)
        if len(nodes) == 0:
            return np.zeros(0)
        starts = range(0, len(nodes), CHUNK_SIZE)
        # Fixed chunk boundaries keep results independent of the worker count
        parts = Parallel(n_jobs=self.n_jobs, prefer='threads')(
            delayed(fn)(nodes[i:i + CHUNK_SIZE]) for i in starts
        )
        return np.concatenate(parts)

    def _sdf_chunk(self, nodes: np.ndarray) -> np.ndarray:
        affinities = self.engine.compute(nodes)
        with torch.no_grad():
            q = torch.as_tensor(nodes, dtype=DTYPE)
            return self.checkpoint.model(q, torch.as_tensor(affinities, dtype=DTYPE)).numpy()

    def _unseen_chunk(self, nodes: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.checkpoint.model.forward_unseen(torch.as_tensor(nodes, dtype=DTYPE)).numpy()

    def sdf(self, nodes: np.ndarray) -> np.ndarray:
        return self._chunked(self._sdf_chunk, nodes)

    def closure_sdf(self, nodes: np.ndarray) -> np.ndarray:
        """The field used outside a part's cell."""
        if self.closure == ClosureMode.CONSTANT:
            return np.full(len(nodes), CLOSURE_DISTANCE)
        return self._chunked(self._unseen_chunk, nodes)

    def cell_index(self, nodes: np.ndarray) -> np.ndarray:
        return self.engine.cell_index(nodes)
