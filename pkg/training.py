"""
Query sampling, the two training objectives and the optimisation loop.
"""
import json
import logging
import threading
import time
from typing import Callable, TextIO

import numpy as np
import torch
from sklearn.neighbors import NearestNeighbors

from affinity import AffinityEngine
from checkpoint import Checkpoint
from errors import EmptyBatch, InvalidArgument, NumericalError
from models import (
    AffinityConfig, GeodesicTable, LossMode, NetConfig, Normalization, PointCloud, QuerySet, RegionCenters, TrainConfig
)
from network import DTYPE, AdamState, LatentPartitionSDF, adam_step, check_finite

__all__ = [
    'noise_scales', 'sample_queries', 'sample_supervised_queries', 'project_query', 'chamfer_sum',
    'pulling_loss', 'mse_loss', 'Trainer', 'make_trainer', 'train'
]

logger = logging.getLogger(__name__)

# Queries whose SDF gradient is shorter than this cannot be projected
MIN_GRADIENT_NORM = 1e-12


def noise_scales(cloud: PointCloud, knn_k: int) -> np.ndarray:
    """Distance from each point to its knn_k-th nearest neighbour (itself excluded)."""
    if not 1 <= knn_k < len(cloud):
        raise InvalidArgument(f'knn_k must lie in [1, {len(cloud) - 1}], got {knn_k}')
    neighbours = NearestNeighbors(n_neighbors=knn_k + 1).fit(cloud.points)
    distances, _ = neighbours.kneighbors(cloud.points)
    return distances[:, knn_k]


def sample_queries(cloud: PointCloud, per_point: int, knn_k: int, seed: int = 0,
                   affinity: AffinityEngine | None = None) -> QuerySet:
    """Gaussian queries around every surface point, scaled by the local point spacing.

    Queries are laid out parent-major: the first `per_point` rows belong to point 0.
    Affinities are computed once here and stay fixed for the whole run.
    """
    if per_point < 0:
        raise InvalidArgument(f'per_point must be non-negative, got {per_point}')
    scales = noise_scales(cloud, knn_k)
    rng = np.random.default_rng(seed)

    parents = np.repeat(np.arange(len(cloud)), per_point)
    noise = rng.standard_normal((len(parents), 3)) * scales[parents, None]
    queries = cloud.points[parents] + noise

    n_codes = 1 if affinity is None else affinity.n_codes
    affinities = np.full((len(queries), n_codes), 1.0 / n_codes) if affinity is None else affinity.compute(queries)
    logger.info(f'Sampled {len(queries)} queries around {len(cloud)} points '
                f'(median noise scale {np.median(scales):.3g})')
    return QuerySet(queries, affinities, parents)


def sample_supervised_queries(cloud: PointCloud, per_point: int, knn_k: int, sdf_fn: Callable[[np.ndarray], np.ndarray],
                              seed: int = 0, affinity: AffinityEngine | None = None) -> QuerySet:
    """Queries as `sample_queries`, each labelled with its ground truth signed distance."""
    queries = sample_queries(cloud, per_point, knn_k, seed, affinity)
    gt = np.asarray(sdf_fn(queries.queries), dtype=np.float64).reshape(-1)
    if gt.shape != (len(queries),) or not np.isfinite(gt).all():
        raise InvalidArgument('Ground truth signed distances must be finite, one per query')
    queries.gt_sdf = gt
    return queries


def project_query(model: LatentPartitionSDF, q: torch.Tensor, a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Moves each query along the normalised gradient by its predicted distance.

    Returns the projected positions of the usable queries and the mask of usable
    queries. The projection stays on the autograd graph.
    """
    s, grad = model.sdf_and_gradient(q, a)
    norm = torch.linalg.vector_norm(grad, dim=-1)
    valid = norm >= MIN_GRADIENT_NORM
    projected = q[valid] - s[valid, None] * grad[valid] / norm[valid, None]
    return projected, valid


def chamfer_sum(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sum of squared nearest distances from x to y plus from y to x, computed exactly."""
    d = ((x[:, None, :] - y[None, :, :]) ** 2).sum(dim=-1)
    return d.min(dim=1).values.sum() + d.min(dim=0).values.sum()


def pulling_loss(model: LatentPartitionSDF, batch: QuerySet, cloud: PointCloud) -> tuple[torch.Tensor, int]:
    """Symmetric Chamfer between the batch's surface points and the projected queries.

    Returns the loss and the number of queries excluded for a vanishing gradient.
    """
    q = torch.as_tensor(batch.queries, dtype=DTYPE).detach().clone().requires_grad_(True)
    a = torch.as_tensor(batch.affinities, dtype=DTYPE)
    projected, valid = project_query(model, q, a)
    excluded = int((~valid).sum())
    if len(projected) == 0:
        raise EmptyBatch(f'All {len(batch)} queries in the batch were excluded')

    # Only parents of queries that were projected take part
    parents = batch.parents[valid.numpy()]
    surface = torch.as_tensor(cloud.points[np.unique(parents)], dtype=DTYPE)
    return chamfer_sum(surface, projected), excluded


def mse_loss(model: LatentPartitionSDF, batch: QuerySet) -> torch.Tensor:
    if batch.gt_sdf is None:
        raise InvalidArgument('MSE loss needs ground truth signed distances')
    if len(batch) == 0:
        raise EmptyBatch('Empty batch')
    q = torch.as_tensor(batch.queries, dtype=DTYPE)
    a = torch.as_tensor(batch.affinities, dtype=DTYPE)
    gt = torch.as_tensor(batch.gt_sdf, dtype=DTYPE)
    return ((model(q, a) - gt) ** 2).mean()


class Trainer:
    def __init__(
            self,
            model: LatentPartitionSDF,
            queries: QuerySet,
            cloud: PointCloud,
            config: TrainConfig,
            shutdown_event: threading.Event | None = None,
            log_stream: TextIO | None = None
    ):
        """Runs Adam steps over shuffled batches of a fixed query set."""
        if config.loss == LossMode.MSE and queries.gt_sdf is None:
            raise InvalidArgument('MSE loss needs ground truth signed distances')
        self.model = model
        self.queries = queries
        self.cloud = cloud
        self.config = config
        self.shutdown_event = shutdown_event or threading.Event()
        self.log_stream = log_stream

        self.params = list(model.parameters())
        self.adam = AdamState(self.params, lr=config.learning_rate)
        self.rng = np.random.default_rng(config.seed + 1)
        self.step = 0
        self.losses: list[float] = []
        self.excluded: list[int] = []

        self._order = np.zeros(0, dtype=np.int64)
        self._cursor = 0
        self._started = time.monotonic()

    def _next_batch(self) -> QuerySet:
        """The next batch of a reshuffled-every-epoch pass over the queries."""
        if len(self.queries) == 0:
            raise EmptyBatch('No training queries')
        batch_size = min(self.config.batch_size, len(self.queries))
        if self._cursor + batch_size > len(self._order):
            self._order = self.rng.permutation(len(self.queries))
            self._cursor = 0
        indices = self._order[self._cursor:self._cursor + batch_size]
        self._cursor += batch_size
        return self.queries.subset(indices)

    def _loss(self, batch: QuerySet) -> tuple[torch.Tensor, int]:
        if self.config.loss == LossMode.MSE:
            return mse_loss(self.model, batch), 0
        return pulling_loss(self.model, batch, self.cloud)

    def _log(self, loss: float, excluded: int) -> None:
        record = {
            'step': self.step,
            'loss': loss,
            'excluded': excluded,
            'wall_ms': round((time.monotonic() - self._started) * 1000, 3),
        }
        logger.info(f'Step {self.step}: loss {loss:.6g}, {excluded} queries excluded')
        if self.log_stream is not None:
            self.log_stream.write(json.dumps(record) + '\n')
            self.log_stream.flush()

    def _tick(self) -> float:
        """One Adam step. Parameters are only touched once loss and gradients are finite."""
        batch = self._next_batch()
        loss, excluded = self._loss(batch)
        check_finite(loss, f'the loss at step {self.step}')
        grads = torch.autograd.grad(loss, self.params)
        for grad in grads:
            check_finite(grad, f'the gradients at step {self.step}')
        if excluded:
            logger.debug(f'{excluded} queries with a vanishing gradient excluded at step {self.step}')

        value = loss.item()
        if self.step % self.config.log_every == 0 or self.step == self.config.steps - 1:
            self._log(value, excluded)

        adam_step(self.adam, list(grads))
        self.losses.append(value)
        self.excluded.append(excluded)
        self.step += 1
        return value

    def run(self, steps: int | None = None) -> None:
        """Runs `steps` more steps (default: up to `config.steps`) unless shut down."""
        target = self.config.steps if steps is None else self.step + steps
        logger.info(f'Training from step {self.step} to {target}')
        with torch.autograd.set_detect_anomaly(self.config.debug):
            while self.step < target and not self.shutdown_event.is_set():
                self._tick()
        if self.shutdown_event.is_set():
            logger.info(f'Training interrupted at step {self.step}')
        else:
            logger.info(f'Training stopped at step {self.step}')


def make_trainer(
        cloud: PointCloud,
        centers: RegionCenters,
        config: TrainConfig,
        net_config: NetConfig = NetConfig(),
        affinity_config: AffinityConfig = AffinityConfig(),
        table: GeodesicTable | None = None,
        sdf_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        shutdown_event: threading.Event | None = None,
        log_stream: TextIO | None = None,
        labeled: PointCloud | None = None
) -> Trainer:
    """Initialises a model and samples its training queries."""
    torch.use_deterministic_algorithms(True)
    engine = AffinityEngine(affinity_config, cloud, centers, table, labeled)
    model = LatentPartitionSDF(net_config, engine.n_codes, seed=config.seed)

    if config.loss == LossMode.MSE:
        if sdf_fn is None:
            raise InvalidArgument('MSE loss needs a ground truth signed distance function')
        queries = sample_supervised_queries(cloud, config.queries_per_point, config.noise_k, sdf_fn,
                                            config.seed, engine)
    else:
        queries = sample_queries(cloud, config.queries_per_point, config.noise_k, config.seed, engine)
    return Trainer(model, queries, cloud, config, shutdown_event, log_stream)


def train(
        cloud: PointCloud,
        centers: RegionCenters,
        config: TrainConfig,
        net_config: NetConfig = NetConfig(),
        affinity_config: AffinityConfig = AffinityConfig(),
        normalization: Normalization = Normalization(),
        table: GeodesicTable | None = None,
        sdf_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        shutdown_event: threading.Event | None = None,
        log_stream: TextIO | None = None,
        labeled: PointCloud | None = None
) -> Checkpoint:
    """Fits a model to a normalized cloud and returns its checkpoint.

    On a non-finite loss the NumericalError raised carries the last good checkpoint
    as its `checkpoint` attribute.
    `labeled` is an optional sparse labelled cloud for semantic affinity, in the
    normalized frame of `cloud`.
    """
    trainer = make_trainer(cloud, centers, config, net_config, affinity_config, table, sdf_fn,
                           shutdown_event, log_stream, labeled)

    def checkpoint() -> Checkpoint:
        return Checkpoint(trainer.model, affinity_config, cloud, centers, normalization, table, trainer.step,
                          labeled)

    try:
        trainer.run()
    except NumericalError as e:
        logger.error(f'Training aborted at step {trainer.step}: {e}')
        e.checkpoint = checkpoint()
        raise
    return checkpoint()
