"""
Reconstruction quality metrics on sampled surfaces and watertight meshes.
"""
import logging

import numpy as np
import trimesh

from errors import DegenerateMesh, InvalidArgument, NonWatertight
from extraction.surface import to_trimesh
from geometry.spatial import SpatialIndex
from models import SampledSurface, TriangleMesh

__all__ = [
    'sample_mesh', 'chamfer', 'normal_consistency', 'f_score', 'occupancy', 'volumetric_iou', 'evaluate'
]

logger = logging.getLogger(__name__)

DEFAULT_MU = 0.002
DEFAULT_SAMPLES = 10000
DEFAULT_IOU_RESOLUTION = 64
# Column offsets that keep parity rays off triangle edges
RAY_JITTER = np.array([1e-7 * np.sqrt(2), 1e-7 * np.sqrt(3)])


def sample_mesh(mesh: TriangleMesh, n: int, seed: int = 0, source: str = '') -> SampledSurface:
    """Area-uniform surface samples with the normals of the triangles they fall on."""
    if mesh.is_empty or not mesh.area > 0:
        raise DegenerateMesh(f'Cannot sample a mesh with zero area ({len(mesh.triangles)} triangles)')
    points, faces = trimesh.sample.sample_surface(to_trimesh(mesh), n, seed=seed)
    tri = mesh.vertices[mesh.triangles[faces]]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return SampledSurface(np.asarray(points, dtype=np.float64), normals, source)


def _nearest(a: SampledSurface, b: SampledSurface) -> tuple[np.ndarray, np.ndarray]:
    return SpatialIndex(b.points).query(a.points)


def chamfer(a: SampledSurface, b: SampledSurface, order: int = 2) -> float:
    """Mean nearest distance from a to b plus from b to a; squared for order 2."""
    if order not in (1, 2):
        raise InvalidArgument(f'Chamfer order must be 1 or 2, got {order}')
    _, ab = _nearest(a, b)
    _, ba = _nearest(b, a)
    return float(np.mean(ab ** order) + np.mean(ba ** order))


def normal_consistency(a: SampledSurface, b: SampledSurface) -> float:
    """Mean absolute cosine between each sample's normal and its nearest neighbour's, both ways."""
    nn_ab, _ = _nearest(a, b)
    nn_ba, _ = _nearest(b, a)
    cos_ab = np.abs(np.einsum('ij,ij->i', a.normals, b.normals[nn_ab]))
    cos_ba = np.abs(np.einsum('ij,ij->i', b.normals, a.normals[nn_ba]))
    return float(0.5 * (cos_ab.mean() + cos_ba.mean()))


def f_score(a: SampledSurface, b: SampledSurface, mu: float = DEFAULT_MU) -> float:
    if not mu > 0:
        raise InvalidArgument(f'mu must be positive, got {mu}')
    _, ab = _nearest(a, b)
    _, ba = _nearest(b, a)
    precision = float(np.mean(ab < mu))
    recall = float(np.mean(ba < mu))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _check_watertight(mesh: TriangleMesh, name: str) -> None:
    if mesh.is_empty or not to_trimesh(mesh).is_watertight:
        raise NonWatertight(f'{name} mesh is not watertight')


def occupancy(mesh: TriangleMesh, bounds_min: np.ndarray, bounds_max: np.ndarray, resolution: int) -> np.ndarray:
    """Inside/outside of every cell centre, by the parity of surface crossings along +z.

    One ray per grid column is cast from below the mesh with trimesh, and each cell
    counts the hits below its centre.
    """
    cell = (bounds_max - bounds_min) / resolution
    centres = [bounds_min[axis] + (np.arange(resolution) + 0.5) * cell[axis] for axis in range(3)]
    xx, yy = np.meshgrid(centres[0] + RAY_JITTER[0], centres[1] + RAY_JITTER[1], indexing='ij')
    start = min(bounds_min[2], mesh.vertices[:, 2].min()) - 1.0
    origins = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, start)])
    directions = np.tile([0.0, 0.0, 1.0], (len(origins), 1))
    hits, rays, _ = to_trimesh(mesh).ray.intersects_location(origins, directions, multiple_hits=True)

    # crossings[c, k]: hits of column c between cell centre k-1 and k
    crossings = np.zeros((len(origins), resolution + 1), dtype=np.int64)
    np.add.at(crossings, (rays, np.searchsorted(centres[2], hits[:, 2])), 1)
    inside = np.cumsum(crossings, axis=1)[:, :resolution] % 2 == 1
    return inside.reshape((resolution,) * 3)


def volumetric_iou(mesh_a: TriangleMesh, mesh_b: TriangleMesh, resolution: int = DEFAULT_IOU_RESOLUTION) -> float:
    """Intersection over union of the two solids on a shared voxel grid."""
    _check_watertight(mesh_a, 'First')
    _check_watertight(mesh_b, 'Second')
    vertices = np.vstack([mesh_a.vertices, mesh_b.vertices])
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    pad = (hi - lo) / resolution
    lo, hi = lo - pad, hi + pad

    occ_a = occupancy(mesh_a, lo, hi, resolution)
    occ_b = occupancy(mesh_b, lo, hi, resolution)
    union = np.logical_or(occ_a, occ_b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(occ_a, occ_b).sum() / union)


def evaluate(
        mesh: TriangleMesh,
        reference: TriangleMesh,
        n_samples: int = DEFAULT_SAMPLES,
        mu: float = DEFAULT_MU,
        seed: int = 0,
        iou: bool = False,
        iou_resolution: int = DEFAULT_IOU_RESOLUTION
) -> dict:
    """The metrics report. A failed IoU precondition is recorded under `iou_error`, not raised."""
    a = sample_mesh(mesh, n_samples, seed, source='mesh')
    b = sample_mesh(reference, n_samples, seed, source='reference')
    report = {
        'l1cd': chamfer(a, b, 1),
        'l2cd': chamfer(a, b, 2),
        'nc': normal_consistency(a, b),
        'fscore_mu': f_score(a, b, mu),
        'fscore_2mu': f_score(a, b, 2 * mu),
        'iou': None,
        'n_samples': n_samples,
        'mu': mu,
        'seed': seed,
    }
    if iou:
        try:
            report['iou'] = volumetric_iou(mesh, reference, iou_resolution)
        except NonWatertight as e:
            logger.error(f'IoU skipped: {e}')
            report['iou_error'] = str(e)
    logger.info(f'L2CD {report["l2cd"]:.6g}, NC {report["nc"]:.4f}, F({mu}) {report["fscore_mu"]:.4f}')
    return report
