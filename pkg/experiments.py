"""
Ablation and sweep drivers: affinity modes, surface-code counts and convergence.
"""
import logging
import threading
from dataclasses import replace

import numpy as np

from checkpoint import Checkpoint
from config import Settings
from errors import EmptyMesh, InvalidArgument
from extraction.field import NeuralField
from extraction.grid import evaluate_grid
from extraction.surface import marching_cubes
from geometry import build_geodesic_table, farthest_point_sample, segment_centers
from metrics import chamfer, f_score, normal_consistency, sample_mesh
from models import AffinityMode, GeodesicTable, PointCloud, RegionCenters, SampledSurface, TriangleMesh
from training import Trainer, make_trainer

__all__ = ['compare_affinities', 'sweep_region_counts', 'convergence_curve', 'surface_metrics']

logger = logging.getLogger(__name__)

# Final loss is the median over this many trailing steps
FINAL_WINDOW = 100


def _final_loss(trainer: Trainer) -> float | None:
    if not trainer.losses:
        return None
    return float(np.median(trainer.losses[-FINAL_WINDOW:]))


def _centers_for(cloud: PointCloud, settings: Settings, mode: AffinityMode) -> RegionCenters:
    if mode == AffinityMode.SEMANTIC:
        return segment_centers(cloud)
    return farthest_point_sample(cloud, settings.regions, settings.seed)


def _trainer(cloud: PointCloud, centers: RegionCenters, settings: Settings, mode: AffinityMode,
             shutdown_event: threading.Event | None) -> tuple[Trainer, GeodesicTable | None]:
    settings = replace(settings, affinity=mode.value)
    table = None
    if mode == AffinityMode.INTRINSIC:
        table = build_geodesic_table(cloud, centers, settings.geodesic_k, n_jobs=settings.n_jobs)
    trainer = make_trainer(cloud, centers, settings.train_config(), settings.net_config(),
                           settings.affinity_config(), table, shutdown_event=shutdown_event)
    return trainer, table


def _reconstruct(trainer: Trainer, cloud: PointCloud, centers: RegionCenters, table: GeodesicTable | None,
                 settings: Settings, mode: AffinityMode) -> TriangleMesh | None:
    affinity = replace(settings, affinity=mode.value).affinity_config()
    checkpoint = Checkpoint(trainer.model, affinity, cloud, centers, table=table, step=trainer.step)
    try:
        return marching_cubes(evaluate_grid(NeuralField(checkpoint, n_jobs=settings.n_jobs), settings.resolution))
    except EmptyMesh as e:
        logger.warning(f'No surface reconstructed: {e}')
        return None


def surface_metrics(mesh: TriangleMesh | None, target: SampledSurface, settings: Settings) -> dict:
    """Chamfer and F-score of a mesh against target samples; normal consistency when the target has normals."""
    if mesh is None:
        return {'l1cd': None, 'l2cd': None, 'nc': None, 'fscore': None}
    samples = sample_mesh(mesh, len(target), settings.seed)
    has_normals = bool(np.any(target.normals))
    return {
        'l1cd': chamfer(samples, target, 1),
        'l2cd': chamfer(samples, target, 2),
        'nc': normal_consistency(samples, target) if has_normals else None,
        'fscore': f_score(samples, target, settings.mu),
    }


def _cloud_target(cloud: PointCloud) -> SampledSurface:
    return SampledSurface(cloud.points, np.zeros_like(cloud.points), source='input')


def compare_affinities(
        cloud: PointCloud,
        modes: list[AffinityMode],
        settings: Settings,
        reference: SampledSurface | None = None,
        shutdown_event: threading.Event | None = None
) -> dict[str, dict]:
    """Trains one model per affinity mode on the same cloud, centers and seed."""
    target = reference if reference is not None else _cloud_target(cloud)
    report = {}
    for mode in modes:
        if mode == AffinityMode.SEMANTIC and cloud.segment_labels is None:
            raise InvalidArgument('Semantic affinity needs a labelled cloud')
        centers = _centers_for(cloud, settings, mode)
        logger.info(f'Affinity ablation: training with {mode.value}')
        trainer, table = _trainer(cloud, centers, settings, mode, shutdown_event)
        trainer.run()
        mesh = _reconstruct(trainer, cloud, centers, table, settings, mode)
        report[mode.value] = {
            'final_loss': _final_loss(trainer),
            'losses': trainer.losses,
            **surface_metrics(mesh, target, settings),
        }
    return report


def sweep_region_counts(
        cloud: PointCloud,
        counts: list[int],
        settings: Settings,
        reference: SampledSurface | None = None,
        shutdown_event: threading.Event | None = None
) -> dict[int, dict]:
    """Trains one model per surface-code count with the configured affinity."""
    target = reference if reference is not None else _cloud_target(cloud)
    mode = AffinityMode(settings.affinity)
    if mode == AffinityMode.SEMANTIC:
        raise InvalidArgument('Semantic affinity fixes the code count to the segment count')
    report = {}
    for count in counts:
        swept = replace(settings, regions=count)
        centers = _centers_for(cloud, swept, mode)
        logger.info(f'Region sweep: training with {count} surface codes')
        trainer, table = _trainer(cloud, centers, swept, mode, shutdown_event)
        trainer.run()
        mesh = _reconstruct(trainer, cloud, centers, table, swept, mode)
        report[count] = {'final_loss': _final_loss(trainer), **surface_metrics(mesh, target, swept)}
    return report


def convergence_curve(
        cloud: PointCloud,
        settings: Settings,
        every: int,
        reference: SampledSurface | None = None,
        shutdown_event: threading.Event | None = None
) -> list[dict]:
    """Reconstruction error every `every` steps of a single run."""
    if every <= 0:
        raise InvalidArgument(f'every must be positive, got {every}')
    target = reference if reference is not None else _cloud_target(cloud)
    mode = AffinityMode(settings.affinity)
    centers = _centers_for(cloud, settings, mode)
    trainer, table = _trainer(cloud, centers, settings, mode, shutdown_event)

    curve = []
    while trainer.step < settings.steps and not trainer.shutdown_event.is_set():
        trainer.run(min(every, settings.steps - trainer.step))
        mesh = _reconstruct(trainer, cloud, centers, table, settings, mode)
        curve.append({'step': trainer.step, 'loss': _final_loss(trainer), **surface_metrics(mesh, target, settings)})
    return curve
