import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from affinity import (
    AffinityEngine, ablation_affinity, euclid_dist, gaussian_normalize, intrinsic_dist, semantic_affinity
)
from errors import InvalidArgument
from geometry import SpatialIndex, build_geodesic_table, farthest_point_sample, segment_centers
from models import AffinityConfig, AffinityMode, PointCloud, RegionCenters

distances = arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 50, allow_nan=False))


def line_cloud(labels=None) -> PointCloud:
    return PointCloud(np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)]), labels)


def test_euclid_dist_example():
    centers = RegionCenters(np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]), np.array([0, 1]))
    np.testing.assert_allclose(euclid_dist([0, 0, 0], centers), [[5.0, 0.0]])


def test_gaussian_normalize_example():
    np.testing.assert_allclose(gaussian_normalize(np.array([0.0, 1.0]), 1.0), [0.73106, 0.26894], atol=1e-5)


def test_single_center_gets_all_weight():
    np.testing.assert_array_equal(gaussian_normalize(np.array([[7.5]]), 0.1), [[1.0]])


def test_large_distances_do_not_underflow():
    a = gaussian_normalize(np.array([1000.0, 1001.0]), 1.0)
    assert np.isfinite(a).all()
    np.testing.assert_allclose(a, [0.73106, 0.26894], atol=1e-5)


@settings(max_examples=200, deadline=None)
@given(distances, st.floats(0.01, 10.0))
def test_gaussian_rows_sum_to_one(d, sigma):
    a = gaussian_normalize(d, sigma)
    assert (a >= 0).all()
    assert a.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(distances, st.floats(-20, 20))
def test_gaussian_shift_invariance(d, shift):
    np.testing.assert_allclose(gaussian_normalize(d + shift, 0.7), gaussian_normalize(d, 0.7), atol=1e-12)


def test_small_sigma_tends_to_nearest():
    a = gaussian_normalize(np.array([0.3, 0.1, 0.2]), 1e-4)
    np.testing.assert_allclose(a, [0.0, 1.0, 0.0], atol=1e-12)


@pytest.mark.parametrize('sigma', [0.05, 1.0, 10.0])
def test_euclidean_strongest_code_is_nearest_center(sphere_cloud, sphere_centers, rng, sigma):
    queries = rng.uniform(-0.5, 0.5, size=(500, 3))
    engine = AffinityEngine(AffinityConfig(AffinityMode.EUCLIDEAN, sigma), sphere_cloud, sphere_centers)
    np.testing.assert_array_equal(engine.compute(queries).argmax(axis=1),
                                  euclid_dist(queries, sphere_centers).argmin(axis=1))


@pytest.mark.parametrize('n_segments, expected', [
    (4, [0.8, 0.2 / 3, 0.2 / 3, 0.2 / 3]),
    (2, [0.8, 0.2]),
])
def test_semantic_affinity(n_segments, expected):
    labels = np.arange(6) % n_segments
    index = SpatialIndex(line_cloud().points)
    a = semantic_affinity([[0.1, 0, 0]], labels, index, n_segments, 0.8)
    np.testing.assert_allclose(a, [expected])


def test_semantic_affinity_follows_nearest_label():
    labels = np.array([0, 0, 0, 1, 1, 1])
    a = semantic_affinity([[4.2, 0, 0]], labels, SpatialIndex(line_cloud().points), 2, 0.8)
    np.testing.assert_allclose(a, [[0.2, 0.8]])


def test_semantic_needs_two_segments():
    with pytest.raises(InvalidArgument):
        semantic_affinity([[0, 0, 0]], np.zeros(6, dtype=int), SpatialIndex(line_cloud().points), 1, 0.8)


def test_ablation_modes():
    centers = RegionCenters(np.array([[-1.0, 0, 0], [1.0, 0, 0], [0, 5.0, 0]]), np.arange(3))
    np.testing.assert_allclose(ablation_affinity([[0.9, 0, 0]], centers, AffinityMode.AVERAGE), [[1 / 3] * 3])
    np.testing.assert_array_equal(ablation_affinity([[0.9, 0, 0]], centers, AffinityMode.NEAREST), [[0, 1, 0]])
    # Equidistant from the first two centers
    np.testing.assert_array_equal(ablation_affinity([[0, 0, 0]], centers, AffinityMode.NEAREST), [[1, 0, 0]])


def test_ablation_rejects_distance_modes():
    centers = RegionCenters(np.eye(3), np.arange(3))
    with pytest.raises(InvalidArgument):
        ablation_affinity([[0, 0, 0]], centers, AffinityMode.EUCLIDEAN)


def test_intrinsic_dist_on_surface():
    cloud = line_cloud()
    centers = RegionCenters.from_indices(cloud, [0, 5])
    table = build_geodesic_table(cloud, centers, knn_k=2)
    index = SpatialIndex(cloud.points)

    np.testing.assert_allclose(intrinsic_dist(cloud.points[2], index, table), [[2.0, 3.0]])
    np.testing.assert_allclose(intrinsic_dist(cloud.points[5], index, table), [[5.0, 0.0]])
    # Off the surface the offset to the nearest point is added
    np.testing.assert_allclose(intrinsic_dist([2, 0.5, 0], index, table), [[2.5, 3.5]])


def test_intrinsic_bounds_euclidean(sphere_cloud, rng):
    centers = farthest_point_sample(sphere_cloud, 8)
    table = build_geodesic_table(sphere_cloud, centers, knn_k=10)
    queries = rng.uniform(-0.4, 0.4, size=(200, 3))

    intrinsic = intrinsic_dist(queries, SpatialIndex(sphere_cloud.points), table)
    assert (intrinsic >= euclid_dist(queries, centers) - 1e-12).all()


@pytest.mark.parametrize('mode', [AffinityMode.EUCLIDEAN, AffinityMode.INTRINSIC, AffinityMode.AVERAGE,
                                  AffinityMode.NEAREST])
def test_engine_rows_sum_to_one(sphere_cloud, rng, mode):
    centers = farthest_point_sample(sphere_cloud, 8)
    table = build_geodesic_table(sphere_cloud, centers, knn_k=10) if mode == AffinityMode.INTRINSIC else None
    engine = AffinityEngine(AffinityConfig(mode, sigma=0.05), sphere_cloud, centers, table)

    a = engine.compute(rng.uniform(-0.5, 0.5, size=(300, 3)))
    assert a.shape == (300, 8)
    assert (a >= 0).all()
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)


def test_engine_semantic(sphere_cloud):
    labels = (sphere_cloud.points[:, 2] > 0).astype(int)
    cloud = PointCloud(sphere_cloud.points, labels)
    centers = RegionCenters.from_indices(cloud, [int(np.flatnonzero(labels == s)[0]) for s in (0, 1)])
    engine = AffinityEngine(AffinityConfig(AffinityMode.SEMANTIC), cloud, centers)

    np.testing.assert_allclose(engine.compute([[0, 0, 0.35]]), [[0.2, 0.8]])
    assert engine.cell_index([[0, 0, -0.35], [0, 0, 0.35]]).tolist() == [0, 1]


def test_engine_semantic_uses_separate_labelled_cloud(sphere_cloud):
    sparse = PointCloud(np.array([[0, 0, -0.3], [0, 0, 0.3], [0.3, 0, 0], [-0.3, 0, 0]]), np.array([0, 1, 2, 2]))
    centers = segment_centers(sparse)
    engine = AffinityEngine(AffinityConfig(AffinityMode.SEMANTIC), sphere_cloud, centers, labeled=sparse)

    np.testing.assert_allclose(engine.compute([[0, 0, 0.35], [-0.4, 0.01, 0]]), [[0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
    assert engine.cell_index([[0, 0.01, -0.35], [0.25, 0, 0.01]]).tolist() == [0, 2]
    with pytest.raises(InvalidArgument):
        AffinityEngine(AffinityConfig(AffinityMode.SEMANTIC), sphere_cloud, farthest_point_sample(sphere_cloud, 2),
                       labeled=sparse)


def test_engine_cell_index_is_nearest_center(sphere_cloud, sphere_centers, euclidean):
    engine = AffinityEngine(euclidean, sphere_cloud, sphere_centers)
    queries = sphere_centers.centers * 1.1
    assert engine.cell_index(queries).tolist() == [0, 1, 2, 3]


def test_engine_empty_queries(sphere_cloud, sphere_centers, euclidean):
    assert AffinityEngine(euclidean, sphere_cloud, sphere_centers).compute(np.zeros((0, 3))).shape == (0, 4)


def test_engine_validation(sphere_cloud, sphere_centers):
    with pytest.raises(InvalidArgument):
        AffinityEngine(AffinityConfig(AffinityMode.INTRINSIC), sphere_cloud, sphere_centers)
    with pytest.raises(InvalidArgument):
        AffinityEngine(AffinityConfig(sigma=0.0), sphere_cloud, sphere_centers)
    with pytest.raises(InvalidArgument):
        AffinityEngine(AffinityConfig(AffinityMode.SEMANTIC), sphere_cloud, sphere_centers)

    labelled = PointCloud(sphere_cloud.points, np.arange(len(sphere_cloud)) % 2)
    with pytest.raises(InvalidArgument):
        AffinityEngine(AffinityConfig(AffinityMode.SEMANTIC), labelled, sphere_centers)
    with pytest.raises(InvalidArgument):
        AffinityEngine(AffinityConfig(AffinityMode.SEMANTIC, semantic_own_weight=0.4), labelled,
                       RegionCenters.from_indices(labelled, [0, 1]))
