import struct

import numpy as np
import pytest
import torch

from checkpoint import (
    CHECKPOINT_MAGIC, Checkpoint, deserialize_checkpoint, load_checkpoint, save_checkpoint, serialize_checkpoint
)
from errors import CorruptCheckpoint, InvalidArgument
from geometry import build_geodesic_table, segment_centers
from models import AffinityConfig, AffinityMode, Normalization, PointCloud, RegionCenters
from network import LatentPartitionSDF


@pytest.fixture
def checkpoint(sphere_cloud, sphere_centers, tiny_model):
    table = build_geodesic_table(sphere_cloud, sphere_centers, knn_k=10)
    normalization = Normalization(scale=2.5, offset=(0.1, -0.2, 3.0))
    return Checkpoint(tiny_model, AffinityConfig(AffinityMode.INTRINSIC, sigma=0.2), sphere_cloud, sphere_centers,
                      normalization, table, step=42)


def test_round_trip_is_exact(checkpoint):
    data = serialize_checkpoint(checkpoint)
    loaded = deserialize_checkpoint(data)

    assert serialize_checkpoint(loaded) == data
    for name, value in checkpoint.model.state_dict().items():
        assert torch.equal(loaded.model.state_dict()[name], value), name
    np.testing.assert_array_equal(loaded.table.dist, checkpoint.table.dist)
    np.testing.assert_array_equal(loaded.cloud.points, checkpoint.cloud.points)
    assert loaded.normalization == checkpoint.normalization
    assert loaded.affinity == checkpoint.affinity
    assert loaded.step == 42


def test_round_trip_with_labels(sphere_cloud, tiny_net_config):
    cloud = PointCloud(sphere_cloud.points, (sphere_cloud.points[:, 2] > 0).astype(int))
    centers = RegionCenters.from_indices(cloud, [0, 399])
    ckpt = Checkpoint(LatentPartitionSDF(tiny_net_config, 2), AffinityConfig(AffinityMode.SEMANTIC), cloud, centers)
    loaded = deserialize_checkpoint(serialize_checkpoint(ckpt))

    np.testing.assert_array_equal(loaded.cloud.segment_labels, cloud.segment_labels)
    assert loaded.table is None


def test_round_trip_with_a_separate_labelled_cloud(sphere_cloud, tiny_net_config):
    sparse = PointCloud(sphere_cloud.points[::40] * 1.01, np.arange(10) % 3)
    centers = segment_centers(sparse)
    ckpt = Checkpoint(LatentPartitionSDF(tiny_net_config, 3), AffinityConfig(AffinityMode.SEMANTIC), sphere_cloud,
                      centers, labeled=sparse)
    data = serialize_checkpoint(ckpt)
    loaded = deserialize_checkpoint(data)

    assert serialize_checkpoint(loaded) == data
    np.testing.assert_array_equal(loaded.labeled.points, sparse.points)
    np.testing.assert_array_equal(loaded.labeled.segment_labels, sparse.segment_labels)
    assert loaded.cloud.segment_labels is None
    assert loaded.summary()['segments'] == 3
    assert loaded.summary()['labeled_points'] == 10
    queries = sphere_cloud.points[:50]
    np.testing.assert_array_equal(loaded.affinity_engine().compute(queries), ckpt.affinity_engine().compute(queries))


def test_labelled_cloud_needs_labels(sphere_cloud, sphere_centers, tiny_model):
    with pytest.raises(InvalidArgument):
        Checkpoint(tiny_model, AffinityConfig(), sphere_cloud, sphere_centers, labeled=sphere_cloud)


def test_summary(checkpoint):
    summary = checkpoint.summary()
    assert summary['regions'] == 4
    assert summary['latent_dim'] == 8
    assert summary['affinity'] == 'intrinsic'
    assert summary['step'] == 42
    assert summary['layer_shapes'] == [[16, 11], [16, 16], [1, 16]]
    assert summary['geodesic_knn_k'] == 10


def test_file_round_trip(checkpoint, tmp_path):
    path = tmp_path / 'nested' / 'model.lpic'
    save_checkpoint(checkpoint, path)
    loaded = load_checkpoint(path)

    assert loaded.summary() == checkpoint.summary()
    assert loaded.identifier() == checkpoint.identifier()
    assert path.read_bytes()[:4] == CHECKPOINT_MAGIC
    assert [p.name for p in path.parent.iterdir()] == ['model.lpic']


def test_identifier_changes_with_parameters(checkpoint):
    before = checkpoint.identifier()
    with torch.no_grad():
        checkpoint.model.codes.codes[0, 0] += 1.0
    assert checkpoint.identifier() != before
    assert len(before) == 16


def test_code_count_must_match_centers(sphere_cloud, sphere_centers, tiny_net_config):
    with pytest.raises(InvalidArgument):
        Checkpoint(LatentPartitionSDF(tiny_net_config, 3), AffinityConfig(), sphere_cloud, sphere_centers)


def test_bad_magic(checkpoint):
    data = serialize_checkpoint(checkpoint)
    with pytest.raises(CorruptCheckpoint):
        deserialize_checkpoint(b'XXXX' + data[4:])


def test_bad_version(checkpoint):
    data = bytearray(serialize_checkpoint(checkpoint))
    struct.pack_into('<I', data, 4, 99)
    with pytest.raises(CorruptCheckpoint):
        deserialize_checkpoint(bytes(data))


@pytest.mark.parametrize('cut', [3, 20, -8])
def test_truncated(checkpoint, cut):
    data = serialize_checkpoint(checkpoint)
    with pytest.raises(CorruptCheckpoint):
        deserialize_checkpoint(data[:cut])


def test_trailing_bytes(checkpoint):
    with pytest.raises(CorruptCheckpoint):
        deserialize_checkpoint(serialize_checkpoint(checkpoint) + b'\0')


def test_missing_file(tmp_path):
    with pytest.raises(CorruptCheckpoint) as info:
        load_checkpoint(tmp_path / 'missing.lpic')
    assert info.value.exit_code == 2
