import sys
import os

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bem import solve_dirichlet
from config import GridSpec
from fieldgrid import evaluate_field, export_field, field_frame, grid_points, magnitude_image
from geometry import Ellipsoid, build_scene
from problems import ProblemSpec, dirichlet_values, incident_field

GRID = GridSpec(resolution=5, side=10.0, z0=0.0)
# u_inc = -1 everywhere, so the scattered field is 1 on the unit sphere
UNIT_DATA = ProblemSpec(variant="laplace_dirichlet", x0=(4.5, 4.5, 4.5), v=(1.0, 0.0, 0.0), phi=(-1.0, 0.0, 0.0))


@pytest.fixture(scope="module")
def sphere():
    return build_scene([Ellipsoid(center=[0.0, 0.0, 0.0], semi_axes=[1.0, 1.0, 1.0])], target_edge_length=0.3)


def test_grid_points():
    xs, ys, points = grid_points(GRID)
    np.testing.assert_allclose(xs, [-4.0, -2.0, 0.0, 2.0, 4.0])
    np.testing.assert_allclose(ys, xs)
    assert points.shape == (25, 3)
    np.testing.assert_allclose(points[7], [0.0, -2.0, 0.0])
    np.testing.assert_array_equal(points[:, 2], 0.0)


def test_zero_trace_gives_incident_field(sphere):
    for problem in (UNIT_DATA, ProblemSpec(variant="helmholtz_dirichlet", x0=(4.5, 4.5, 4.5), k=2.0)):
        grid = evaluate_field(sphere, problem, np.zeros(sphere.mesh.n_vertices), GRID)
        outside = ~grid.mask
        np.testing.assert_allclose(grid.total[outside], grid.incident[outside])
        _, _, points = grid_points(GRID)
        np.testing.assert_allclose(grid.incident.ravel()[outside.ravel()], incident_field(problem, points[outside.ravel()]))
        np.testing.assert_allclose(grid.scattered[outside], 0.0)


def test_sphere_total_field(sphere):
    mesh = sphere.mesh
    trace, _ = solve_dirichlet(mesh, UNIT_DATA.kernel, dirichlet_values(UNIT_DATA, mesh.triangle_centroids))
    grid = evaluate_field(sphere, UNIT_DATA, trace.values, GRID, threads=2)

    # exterior solution 1/R, plus the constant incident field
    assert grid.total[2, 3].real == pytest.approx(1.0 / 2.0 - 1.0, abs=0.02)
    assert grid.total[0, 0].real == pytest.approx(1.0 / np.sqrt(32.0) - 1.0, abs=0.02)
    assert grid.mask[2, 2]
    assert np.isnan(grid.total[2, 2])
    assert grid.mask.sum() == 1


def test_error_grid(sphere):
    mesh = sphere.mesh
    trace, _ = solve_dirichlet(mesh, UNIT_DATA.kernel, dirichlet_values(UNIT_DATA, mesh.triangle_centroids))
    truth = evaluate_field(sphere, UNIT_DATA, trace.values, GRID)
    shifted = evaluate_field(sphere, UNIT_DATA, trace.values * 1.1, GRID)
    error = shifted.difference(truth)
    outside = ~error.mask
    np.testing.assert_allclose(error.total[outside], 0.1 * truth.scattered[outside], rtol=1e-10)
    np.testing.assert_array_equal(error.incident, 0.0)
    with pytest.raises(ValueError):
        truth.difference(evaluate_field(sphere, UNIT_DATA, trace.values, GridSpec(resolution=3)))


def test_field_is_affine_in_trace(sphere):
    rng = np.random.default_rng(2)
    n = sphere.mesh.n_vertices
    problem = ProblemSpec(variant="helmholtz_dirichlet", x0=(4.5, 4.5, 4.5), k=2.0)
    first = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    second = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    combined = evaluate_field(sphere, problem, first + second, GRID)
    a = evaluate_field(sphere, problem, first, GRID)
    b = evaluate_field(sphere, problem, second, GRID)
    outside = ~combined.mask
    np.testing.assert_allclose(combined.total[outside], (a.total + b.total - a.incident)[outside], rtol=1e-10, atol=1e-12)


def test_exports(sphere, tmp_path):
    grid = evaluate_field(sphere, UNIT_DATA, np.zeros(sphere.mesh.n_vertices), GRID)

    frame = pd.read_csv(export_field(grid, tmp_path / "field.csv", "csv"))
    assert list(frame.columns) == ["x", "y", "re", "im", "abs", "masked"]
    assert len(frame) == 25
    assert frame["masked"].sum() == 1
    assert list(field_frame(grid).columns) == list(frame.columns)

    payload = export_field(grid, tmp_path / "field.pgm", "pgm").read_bytes()
    assert payload.startswith(b"P5\n5 5\n255\n")
    assert len(payload) == len(b"P5\n5 5\n255\n") + 25

    png = export_field(grid, tmp_path / "field.png", "png")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    with pytest.raises(ValueError):
        export_field(grid, tmp_path / "field.bmp", "bmp")


def test_magnitude_image_scaling(sphere):
    mesh = sphere.mesh
    trace, _ = solve_dirichlet(mesh, UNIT_DATA.kernel, dirichlet_values(UNIT_DATA, mesh.triangle_centroids))
    grid = evaluate_field(sphere, UNIT_DATA, trace.values, GRID)
    image = magnitude_image(grid)
    assert image.dtype == np.uint8
    # masked center cell is black
    assert image[2, 2] == 0
    assert image.max() == 255
    # |1/R - 1| peaks in the corners and bottoms out next to the sphere
    assert np.all(image[[0, 0, 4, 4], [0, 4, 0, 4]] >= 245)
    assert image[2, 1] <= 10
