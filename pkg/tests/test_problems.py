import sys
import os

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bem import SingularityError
from geometry import Ellipsoid, build_scene
from problems import (
    ProblemSpec,
    dirichlet_monopole_bc,
    dirichlet_values,
    incident_field,
    laplace_dirichlet_bc,
    neumann_planewave_bc,
    sample_problem,
)

ORIGIN = (0.0, 0.0, 0.0)
EX = (1.0, 0.0, 0.0)


@pytest.fixture(scope="module")
def scene():
    return build_scene([
        Ellipsoid(center=[-2.0, 0.0, 0.0], semi_axes=[1.0, 0.6, 0.8]),
        Ellipsoid(center=[2.5, 1.0, -1.0], semi_axes=[0.5, 0.5, 1.2]),
    ], target_edge_length=0.6)


def _helmholtz(k):
    return ProblemSpec(variant="helmholtz_dirichlet", x0=ORIGIN, k=k)


def _laplace(phi, v=EX):
    return ProblemSpec(variant="laplace_dirichlet", x0=ORIGIN, v=v, phi=phi)


def test_monopole_values():
    assert dirichlet_monopole_bc(_helmholtz(2 * np.pi), [[1.0, 0.0, 0.0]])[0] == pytest.approx(-1.0, abs=1e-12)
    assert dirichlet_monopole_bc(_helmholtz(np.pi), [[0.0, 2.0, 0.0]])[0] == pytest.approx(-0.5, abs=1e-12)
    assert dirichlet_monopole_bc(_helmholtz(np.pi / 2), [[0.0, 0.0, 1.0]])[0] == pytest.approx(-1j, abs=1e-12)


def test_monopole_at_source_raises():
    with pytest.raises(SingularityError):
        dirichlet_monopole_bc(_helmholtz(1.0), [ORIGIN])


def test_plane_wave_neumann_values():
    spec = ProblemSpec(variant="helmholtz_neumann", v=EX, k=2.0)
    normals = np.array([[0.0, 1.0, 0.0]])
    assert neumann_planewave_bc(spec, [[0.0, 3.0, 0.0]], normals)[0] == pytest.approx(-2j, abs=1e-12)
    assert neumann_planewave_bc(spec, [[np.pi / 2.0, 0.0, 0.0]], normals)[0] == pytest.approx(2j, abs=1e-12)
    spec = ProblemSpec(variant="helmholtz_neumann", v=EX, k=2 * np.pi)
    assert neumann_planewave_bc(spec, [[1.0, 0.0, 0.0]], normals)[0] == pytest.approx(-2j * np.pi, abs=1e-12)
    with pytest.raises(ValueError):
        neumann_planewave_bc(spec, [[1.0, 0.0, 0.0]], np.zeros((2, 3)))


def test_laplace_terms():
    values, terms = laplace_dirichlet_bc(_laplace((1.0, 0.0, 0.0)), [[3.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    np.testing.assert_allclose(values, -1.0)
    np.testing.assert_allclose(terms[:, 0], -1.0)
    values, _ = laplace_dirichlet_bc(_laplace((0.0, 1.0, 0.0)), [[0.0, 2.0, 0.0]])
    assert values[0] == pytest.approx(-0.5)
    values, terms = laplace_dirichlet_bc(_laplace((0.0, 0.0, 1.0)), [[5.0, 0.0, 0.0]])
    assert values[0] == pytest.approx(-2.0)
    np.testing.assert_allclose(terms.sum(axis=1), values)


def test_incident_field_signs():
    points = np.array([[1.0, 2.0, 0.5], [-3.0, 0.0, 1.0]])
    spec = _helmholtz(3.0)
    np.testing.assert_allclose(incident_field(spec, points), -dirichlet_monopole_bc(spec, points))
    plane = ProblemSpec(variant="helmholtz_neumann", v=EX, k=4.0)
    assert incident_field(plane, [ORIGIN])[0] == pytest.approx(1.0)
    np.testing.assert_allclose(incident_field(_laplace((1.0, 0.0, 0.0)), points), 1.0)


def test_total_field_vanishes_on_boundary(scene):
    vertices = scene.mesh.vertices
    for variant in ("laplace_dirichlet", "helmholtz_dirichlet"):
        spec = sample_problem(variant, scene, 5)
        np.testing.assert_allclose(dirichlet_values(spec, vertices) + incident_field(spec, vertices), 0.0, atol=1e-14)


def test_neumann_has_no_dirichlet_data():
    with pytest.raises(ValueError):
        dirichlet_values(ProblemSpec(variant="helmholtz_neumann", v=EX, k=1.0), [[1.0, 0.0, 0.0]])


def test_spec_validation():
    with pytest.raises(ValidationError):
        ProblemSpec(variant="helmholtz_dirichlet", x0=ORIGIN)
    with pytest.raises(ValidationError):
        _laplace((0.0, 0.0, 0.0), v=(1.0, 1.0, 0.0))
    with pytest.raises(ValidationError):
        _helmholtz(-1.0)
    with pytest.raises(ValidationError):
        ProblemSpec(variant="helmholtz_dirichlet", x0=ORIGIN, k=1.0, colour="red")


def test_sampling_is_deterministic(scene):
    assert sample_problem("helmholtz_dirichlet", scene, 42) == sample_problem("helmholtz_dirichlet", scene, 42)
    assert sample_problem("laplace_dirichlet", scene, 42) == sample_problem("laplace_dirichlet", scene, 42)


def test_sampled_ranges(scene):
    for seed in range(1000):
        spec = sample_problem("helmholtz_dirichlet", scene, seed)
        assert 2 * np.pi / 6.0 <= spec.k <= 2 * np.pi / 0.6
        assert 1.0472 - 1e-4 <= spec.k <= 10.4720 + 1e-4
        for ellipsoid in scene.ellipsoids:
            assert np.linalg.norm(spec.source - ellipsoid.center) > ellipsoid.bounding_radius


def test_laplace_parameters_in_range(scene):
    for seed in range(200):
        spec = sample_problem("laplace_dirichlet", scene, seed)
        assert all(-1.0 <= p <= 1.0 for p in spec.phi)
        assert np.linalg.norm(spec.direction) == pytest.approx(1.0, abs=1e-12)
        assert spec.k is None


def test_neumann_sampling_has_no_source(scene):
    spec = sample_problem("helmholtz_neumann", scene, 3)
    assert spec.x0 is None
    assert spec.k > 0.0


def test_rotation_maps_source_and_direction():
    rotation = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    spec = ProblemSpec(variant="laplace_dirichlet", x0=(1.0, 2.0, 3.0), v=EX, phi=(0.1, 0.2, 0.3))
    rotated = spec.rotated(rotation)
    np.testing.assert_allclose(rotated.source, [-2.0, 1.0, 3.0], atol=1e-15)
    np.testing.assert_allclose(rotated.direction, [0.0, 1.0, 0.0], atol=1e-15)
    assert rotated.phi == spec.phi
