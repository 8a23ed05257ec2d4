"""
Trained model state and its binary file format.

A checkpoint file is little-endian: magic "LPIC", u32 format version, u32 length of a
UTF-8 JSON header, the header itself, then the raw arrays listed in the header's
manifest in order. Floating point arrays are float64, index arrays int64.
"""
import hashlib
import json
import logging
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from affinity import AffinityEngine
from errors import CorruptCheckpoint, InvalidArgument
from models import AffinityConfig, AffinityMode, GeodesicTable, NetConfig, Normalization, PointCloud, RegionCenters
from network import DTYPE, LatentPartitionSDF

__all__ = ['Checkpoint', 'save_checkpoint', 'load_checkpoint', 'serialize_checkpoint', 'deserialize_checkpoint']

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'LPIC'
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct('<4sII')
DTYPES = {'f8': np.dtype('<f8'), 'i8': np.dtype('<i8')}


@dataclass
class Checkpoint:
    model: LatentPartitionSDF
    affinity: AffinityConfig
    cloud: PointCloud  # normalized
    centers: RegionCenters
    normalization: Normalization = Normalization()
    table: GeodesicTable | None = None
    step: int = 0
    labeled: PointCloud | None = None  # sparse labelled cloud for semantic affinity, normalized

    def __post_init__(self):
        if len(self.model.codes) != len(self.centers):
            raise InvalidArgument(f'{len(self.model.codes)} surface codes for {len(self.centers)} region centers')
        if self.labeled is not None and self.labeled.segment_labels is None:
            raise InvalidArgument('The labelled cloud carries no segment labels')

    @property
    def n_codes(self) -> int:
        return len(self.centers)

    @property
    def latent_dim(self) -> int:
        return self.model.config.latent_dim

    def affinity_engine(self) -> AffinityEngine:
        return AffinityEngine(self.affinity, self.cloud, self.centers, self.table, self.labeled)

    def layer_shapes(self) -> list[list[int]]:
        return [list(lin.weight.shape) for lin in self.model.net.layers]

    def identifier(self) -> str:
        return hashlib.sha256(serialize_checkpoint(self)).hexdigest()[:16]

    def summary(self) -> dict:
        """The fields shown by `inspect`."""
        return {
            'regions': self.n_codes,
            'latent_dim': self.latent_dim,
            'affinity': self.affinity.mode.value,
            'sigma': self.affinity.sigma,
            'step': self.step,
            'layer_shapes': self.layer_shapes(),
            'normalization': {'scale': self.normalization.scale, 'offset': list(self.normalization.offset)},
            'points': len(self.cloud),
            'segments': (self.cloud if self.labeled is None else self.labeled).n_segments,
            'labeled_points': None if self.labeled is None else len(self.labeled),
            'geodesic_knn_k': None if self.table is None else self.table.knn_k,
        }


def _arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    arrays = [(f'model.{name}', tensor.detach().cpu().numpy()) for name, tensor in ckpt.model.state_dict().items()]
    arrays += [
        ('normalization.scale', np.array([ckpt.normalization.scale])),
        ('normalization.offset', np.array(ckpt.normalization.offset)),
        ('centers.centers', ckpt.centers.centers),
        ('centers.source_indices', ckpt.centers.source_indices),
        ('cloud.points', ckpt.cloud.points),
    ]
    if ckpt.cloud.segment_labels is not None:
        arrays.append(('cloud.segment_labels', ckpt.cloud.segment_labels))
    if ckpt.table is not None:
        arrays.append(('table.dist', ckpt.table.dist))
    if ckpt.labeled is not None:
        arrays.append(('labeled.points', ckpt.labeled.points))
        arrays.append(('labeled.segment_labels', ckpt.labeled.segment_labels))
    return arrays


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    manifest, blobs = [], []
    for name, array in _arrays(ckpt):
        kind = 'i8' if np.issubdtype(array.dtype, np.integer) else 'f8'
        blob = np.ascontiguousarray(array, dtype=DTYPES[kind]).tobytes()
        manifest.append({'name': name, 'dtype': kind, 'shape': list(array.shape)})
        blobs.append(blob)

    header = {
        'version': CHECKPOINT_VERSION,
        'net': asdict(ckpt.model.config),
        'affinity': {
            'mode': ckpt.affinity.mode.value,
            'sigma': ckpt.affinity.sigma,
            'semantic_own_weight': ckpt.affinity.semantic_own_weight,
        },
        'step': ckpt.step,
        'n_codes': ckpt.n_codes,
        'knn_k': None if ckpt.table is None else ckpt.table.knn_k,
        'manifest': manifest,
    }
    meta = json.dumps(header, sort_keys=True).encode()
    return CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(meta)) + meta + b''.join(blobs)


def _read_arrays(buffer: bytes, offset: int, manifest: list[dict]) -> dict[str, np.ndarray]:
    arrays = {}
    for entry in manifest:
        dtype = DTYPES[entry['dtype']]
        shape = tuple(int(s) for s in entry['shape'])
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + size > len(buffer):
            raise CorruptCheckpoint(f'Checkpoint is truncated in array {entry["name"]}')
        arrays[entry['name']] = np.frombuffer(buffer, dtype=dtype, count=size // dtype.itemsize,
                                              offset=offset).reshape(shape).copy()
        offset += size
    if offset != len(buffer):
        raise CorruptCheckpoint(f'{len(buffer) - offset} trailing bytes after the last array')
    return arrays


def deserialize_checkpoint(buffer: bytes) -> Checkpoint:
    if len(buffer) < CHECKPOINT_HEADER.size:
        raise CorruptCheckpoint('File is too short to be a checkpoint')
    magic, version, meta_length = CHECKPOINT_HEADER.unpack_from(buffer)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f'Bad checkpoint magic {magic!r}')
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f'Unsupported checkpoint version {version}')

    start = CHECKPOINT_HEADER.size
    try:
        header = json.loads(buffer[start:start + meta_length].decode())
        net_config = NetConfig(**header['net'])
        affinity = AffinityConfig(
            mode=AffinityMode(header['affinity']['mode']),
            sigma=float(header['affinity']['sigma']),
            semantic_own_weight=float(header['affinity']['semantic_own_weight'])
        )
        arrays = _read_arrays(buffer, start + meta_length, header['manifest'])

        model = LatentPartitionSDF(net_config, int(header['n_codes']))
        state = {name.removeprefix('model.'): torch.from_numpy(array).to(DTYPE)
                 for name, array in arrays.items() if name.startswith('model.')}
        model.load_state_dict(state, strict=True)

        cloud = PointCloud(arrays['cloud.points'], arrays.get('cloud.segment_labels'))
        centers = RegionCenters(arrays['centers.centers'], arrays['centers.source_indices'])
        normalization = Normalization(
            scale=float(arrays['normalization.scale'][0]),
            offset=tuple(float(v) for v in arrays['normalization.offset'])
        )
        table = None
        if 'table.dist' in arrays:
            table = GeodesicTable(arrays['table.dist'], int(header['knn_k']))
        labeled = None
        if 'labeled.points' in arrays:
            labeled = PointCloud(arrays['labeled.points'], arrays['labeled.segment_labels'])
        return Checkpoint(model, affinity, cloud, centers, normalization, table, int(header['step']), labeled)
    except CorruptCheckpoint:
        raise
    except (KeyError, ValueError, TypeError, RuntimeError, UnicodeDecodeError) as e:
        raise CorruptCheckpoint(f'Unreadable checkpoint: {e}') from e


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Writes the checkpoint atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as stream:
            stream.write(serialize_checkpoint(ckpt))
        os.replace(temp_path, path)
    except BaseException:
        Path(temp_path).unlink(missing_ok=True)
        raise
    logger.info(f'Checkpoint at step {ckpt.step} written to {path}')


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        buffer = Path(path).read_bytes()
    except OSError as e:
        raise CorruptCheckpoint(f'Cannot read checkpoint {path}: {e}') from e
    ckpt = deserialize_checkpoint(buffer)
    logger.info(f'Loaded checkpoint {path} (step {ckpt.step}, {ckpt.n_codes} codes)')
    return ckpt
