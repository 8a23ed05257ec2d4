import json

import numpy as np
import pytest
import torch
from scipy.spatial import cKDTree

from checkpoint import Checkpoint
from errors import EmptyMesh, InvalidArgument, MalformedFile, NumericalError
from extraction import marching_cubes, read_obj, to_trimesh, write_obj
from extraction.bundle import read_bundle, write_bundle
from extraction.field import NeuralField, grid_half_extent
from extraction.grid import empty_grid, evaluate_grid
from extraction.parts import PartExtractor, extract_part, merge_centers, relevel
from geometry import fps_indices
from models import AffinityConfig, ClosureMode, Normalization, ScalarGrid, TriangleMesh
from network import DTYPE
from shapes import AnalyticField, Blob, Dumbbell, Sphere


def sphere_grid(resolution: int, radius: float = 0.3) -> ScalarGrid:
    grid = empty_grid(resolution, 0.55)
    grid.values = Sphere(radius).sdf(grid.nodes()).reshape((resolution,) * 3)
    return grid


def is_closed_manifold(mesh: TriangleMesh) -> bool:
    edges = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts == 2).all())


def test_sphere_mesh():
    grid = sphere_grid(64)
    mesh = marching_cubes(grid)

    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 0.3).max() <= grid.spacing.max()
    assert mesh.area == pytest.approx(4 * np.pi * 0.09, rel=0.03)
    assert is_closed_manifold(mesh)
    assert to_trimesh(mesh).is_watertight


def test_sphere_normals_point_outwards():
    mesh = marching_cubes(sphere_grid(32))
    assert to_trimesh(mesh).volume > 0


def test_grid_without_crossing():
    grid = empty_grid(8, 0.55)
    grid.values += 1.0
    with pytest.raises(EmptyMesh):
        marching_cubes(grid)


def test_grid_with_nan():
    grid = sphere_grid(8)
    grid.values[0, 0, 0] = np.nan
    with pytest.raises(NumericalError):
        marching_cubes(grid)


def test_minimal_grid():
    grid = evaluate_grid(AnalyticField(Sphere(), np.zeros((1, 3))), 2)
    assert grid.values.shape == (2, 2, 2)
    assert (grid.values > 0).all()
    with pytest.raises(InvalidArgument):
        empty_grid(1, 0.55)


def test_grid_nodes_follow_value_order():
    grid = evaluate_grid(AnalyticField(Sphere(0.3, cx=0.1), np.zeros((1, 3))), 5)
    i, j, k = 4, 1, 3
    node = np.array([grid.axes()[0][i], grid.axes()[1][j], grid.axes()[2][k]])
    assert grid.values[i, j, k] == pytest.approx(Sphere(0.3, cx=0.1).sdf(node[None])[0])


def test_grid_half_extent():
    assert grid_half_extent(np.array([[0.1, 0.2, -0.3]])) == 0.55
    assert grid_half_extent(np.array([[0.0, 0.7, 0.0]])) == pytest.approx(0.77)


def test_neural_field_independent_of_worker_count(sphere_cloud, sphere_centers, tiny_model):
    ckpt = Checkpoint(tiny_model, AffinityConfig(), sphere_cloud, sphere_centers)
    serial = evaluate_grid(NeuralField(ckpt, n_jobs=1), 40)
    threaded = evaluate_grid(NeuralField(ckpt, n_jobs=3), 40)
    np.testing.assert_array_equal(serial.values, threaded.values)


def test_neural_field_closures(sphere_cloud, sphere_centers, tiny_model):
    ckpt = Checkpoint(tiny_model, AffinityConfig(), sphere_cloud, sphere_centers)
    nodes = np.random.default_rng(0).uniform(-0.5, 0.5, size=(10, 3))
    assert NeuralField(ckpt).closure == ClosureMode.CONSTANT
    np.testing.assert_array_equal(NeuralField(ckpt).closure_sdf(nodes), np.full(10, 0.05))
    with torch.no_grad():
        unseen = tiny_model.forward_unseen(torch.as_tensor(nodes, dtype=DTYPE)).numpy()
    np.testing.assert_array_equal(NeuralField(ckpt, ClosureMode.UNSEEN).closure_sdf(nodes), unseen)
    np.testing.assert_array_equal(NeuralField(ckpt, 'unseen').closure_sdf(nodes), unseen)
    np.testing.assert_array_equal(NeuralField(ckpt).cell_index(sphere_centers.centers), [0, 1, 2, 3])
    with pytest.raises(InvalidArgument):
        NeuralField(ckpt, 'open')


def test_dumbbell_parts_are_the_lobes():
    shape = Dumbbell()
    field = AnalyticField(shape, np.array([[-0.25, 0.0, 0.0], [0.25, 0.0, 0.0]]))
    extractor = PartExtractor(field, 64)
    h = extractor.grid.spacing.max()

    for index, lobe in enumerate(shape.lobes):
        part = extractor.part(index)
        assert part.part_id == index
        radii = np.linalg.norm(part.vertices - lobe.center, axis=1)
        assert np.abs(radii - shape.radius).max() <= h
        assert to_trimesh(part).is_watertight


def test_single_center_part_is_the_global_mesh():
    field = AnalyticField(Blob(), np.zeros((1, 3)))
    extractor = PartExtractor(field, 32)
    part = extractor.part(0)
    glob = extractor.global_mesh()
    np.testing.assert_array_equal(part.vertices, glob.vertices)
    np.testing.assert_array_equal(part.triangles, glob.triangles)


def test_part_index_out_of_range():
    field = AnalyticField(Sphere(), np.eye(3) * 0.3)
    with pytest.raises(InvalidArgument):
        extract_part(field, 3, 16)


def test_part_without_surface_is_empty():
    # The third center's cell lies entirely outside the sphere
    field = AnalyticField(Sphere(0.2), np.array([[-0.2, 0, 0], [0.2, 0, 0], [0, 0, 0.54]]))
    extractor = PartExtractor(field, 24)
    with pytest.raises(EmptyMesh):
        extractor.part(2)
    parts = extractor.parts()
    assert parts[2].is_empty and parts[2].part_id == 2
    assert not parts[0].is_empty


def test_merge_centers():
    centers = np.array([[0, 0, 0], [0.1, 0, 0], [1, 0, 0], [1.1, 0, 0]], dtype=float)
    kept = fps_indices(centers, 2)
    assignment = merge_centers(centers, 2)
    assert sorted(set(assignment.tolist())) == sorted(kept.tolist())
    assert assignment[0] == assignment[1]
    assert assignment[2] == assignment[3]
    np.testing.assert_array_equal(merge_centers(centers, 4), np.arange(4))
    with pytest.raises(InvalidArgument):
        merge_centers(centers, 5)


@pytest.fixture(scope='module')
def blob_field():
    shape = Blob()
    surface = shape.sample_surface(2000, seed=0).points
    return AnalyticField(shape, surface[fps_indices(surface, 16)])


@pytest.mark.parametrize('level', [2, 4, 8])
def test_relevel_covers_the_shape(blob_field, level):
    bundle = relevel(blob_field, level, 48)
    h = evaluate_grid(blob_field, 48).spacing.max()

    assert len(bundle.parts) == level
    assert bundle.provenance['level'] == level
    part_vertices = np.vstack([m.vertices for m in bundle.parts.values() if not m.is_empty])
    gaps, _ = cKDTree(part_vertices).query(bundle.global_mesh.vertices)
    assert gaps.max() <= 2 * h


def test_relevel_at_full_level_matches_per_center_parts(blob_field):
    extractor = PartExtractor(blob_field, 32)
    bundle = relevel(blob_field, 16, 32, grid=extractor.grid)
    for index, part in extractor.parts().items():
        np.testing.assert_array_equal(bundle.parts[index].vertices, part.vertices)
        np.testing.assert_array_equal(bundle.parts[index].triangles, part.triangles)


def test_obj_round_trip(tmp_path):
    mesh = marching_cubes(sphere_grid(16))
    path = tmp_path / 'sphere.obj'
    normalization = Normalization(scale=2.0, offset=(1.0, 0.0, -1.0))
    write_obj(mesh, path, normalization)

    lines = path.read_text().splitlines()
    assert lines[0].startswith('v ')
    assert lines[-1] == 'f ' + ' '.join(str(i + 1) for i in mesh.triangles[-1])
    loaded = read_obj(path)
    np.testing.assert_allclose(loaded.vertices, normalization.invert(mesh.vertices))
    np.testing.assert_allclose(read_obj(path, normalization).vertices, mesh.vertices, atol=1e-15)
    np.testing.assert_array_equal(loaded.triangles, mesh.triangles)


def test_read_obj_errors(tmp_path):
    with pytest.raises(MalformedFile):
        read_obj(tmp_path / 'missing.obj')
    path = tmp_path / 'points.obj'
    path.write_text('v 0 0 0\nv 1 0 0\n')
    with pytest.raises(MalformedFile):
        read_obj(path)


def test_bundle_round_trip(tmp_path):
    field = AnalyticField(Sphere(0.2), np.array([[-0.2, 0, 0], [0.2, 0, 0], [0, 0, 0.54]]))
    bundle = PartExtractor(field, 24).bundle(provenance={'checkpoint': 'abc'})
    write_bundle(bundle, tmp_path)

    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    assert manifest['checkpoint'] == 'abc'
    assert manifest['resolution'] == 24
    assert [entry['file'] for entry in manifest['parts']] == ['part_000.obj', 'part_001.obj', None]
    assert (tmp_path / 'global.obj').is_file()

    loaded = read_bundle(tmp_path)
    assert sorted(loaded.parts) == [0, 1, 2]
    assert loaded.parts[2].is_empty
    np.testing.assert_allclose(loaded.parts[0].vertices, bundle.parts[0].vertices)
    np.testing.assert_array_equal(loaded.global_mesh.triangles, bundle.global_mesh.triangles)


def test_read_bundle_needs_manifest(tmp_path):
    with pytest.raises(MalformedFile):
        read_bundle(tmp_path)
