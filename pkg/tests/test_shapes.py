import numpy as np
import pytest

from errors import InvalidArgument
from models import Normalization
from shapes import SHAPES, Box, Dumbbell, Sphere, Torus, angular_segments, shape_from_spec


def test_spec_round_trip():
    shape = shape_from_spec('torus:major=0.3,minor=0.05')
    assert isinstance(shape, Torus)
    assert (shape.major, shape.minor) == (0.3, 0.05)
    assert shape_from_spec(shape.spec()).params() == shape.params()


def test_default_parameters():
    assert shape_from_spec('sphere').radius == 0.3


@pytest.mark.parametrize('spec', ['cone', 'sphere:radius', 'sphere:radius=big', 'sphere:height=1',
                                  'torus:major=0.1,minor=0.2', 'dumbbell:radius=0.3,separation=0.5'])
def test_bad_specs(spec):
    with pytest.raises(InvalidArgument):
        shape_from_spec(spec)


@pytest.mark.parametrize('name', ['sphere', 'torus', 'dumbbell'])
def test_exact_samples_lie_on_the_surface(name):
    shape = SHAPES[name]()
    cloud = shape.sample_surface(500, seed=1)
    np.testing.assert_allclose(shape.sdf(cloud.points), 0.0, atol=1e-12)


def test_mesh_based_samples_lie_near_the_surface():
    shape = Box()
    points = shape.sample_surface(500, seed=1).points
    assert np.abs(shape.sdf(points)).max() < 1e-3


def test_sampling_is_deterministic():
    shape = Torus()
    np.testing.assert_array_equal(shape.sample_surface(100, seed=4).points, shape.sample_surface(100, seed=4).points)


def test_sdf_examples():
    assert Sphere(0.3).sdf(np.array([[0.0, 0.0, 0.0]]))[0] == pytest.approx(-0.3)
    assert Box().sdf(np.array([[0.5, 0.0, 0.0]]))[0] == pytest.approx(0.25)
    assert Torus(0.25, 0.1).sdf(np.array([[0.25, 0.0, 0.0]]))[0] == pytest.approx(-0.1)
    assert Dumbbell().sdf(np.array([[0.0, 0.0, 0.0]]))[0] == pytest.approx(0.1)


def test_oriented_samples_have_outward_normals():
    samples = Sphere(0.3).sample_oriented(200, seed=2)
    np.testing.assert_allclose(samples.normals, samples.points / 0.3, atol=1e-6)


def test_normalized_sdf():
    normalization = Normalization(scale=2.0, offset=(1.0, 0.0, 0.0))
    sdf = Sphere(0.3, cx=1.0).normalized_sdf(normalization)
    assert sdf(np.array([[0.0, 0.0, 0.0]]))[0] == pytest.approx(-0.15)
    assert sdf(np.array([[0.15, 0.0, 0.0]]))[0] == pytest.approx(0.0, abs=1e-12)


def test_angular_segments():
    points = np.array([[1.0, 0.01, 0], [-1.0, 0.01, 0], [-1.0, -0.01, 0], [1.0, -0.01, 0]])
    assert angular_segments(points, 4).tolist() == [2, 3, 0, 1]


def test_segmented_cloud_labels():
    cloud = Sphere().sample_surface(400, seed=0, segments=3)
    assert cloud.n_segments == 3
    assert set(cloud.segment_labels.tolist()) == {0, 1, 2}


def test_dumbbell_lobes():
    shape = Dumbbell()
    assert shape.lobe_of(np.array([[-0.2, 0, 0], [0.3, 0, 0]])).tolist() == [0, 1]


def test_reference_mesh():
    mesh = Sphere(0.3).reference_mesh(48)
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.3).max() < 0.03
