import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from geometry import (
    ENVIRONMENT_HALF_EXTENT,
    Ellipsoid,
    MeshingError,
    SceneSamplingError,
    build_scene,
    mesh_ellipsoid,
    points_inside_mesh,
    sample_scene,
    unit_icosphere,
    winding_number,
)

UNIT_SPHERE = Ellipsoid(center=np.zeros(3), semi_axes=np.ones(3))


def test_icosahedron_at_depth_zero():
    mesh = mesh_ellipsoid(UNIT_SPHERE, target_edge_length=10.0)
    assert mesh.n_vertices == 12
    assert mesh.n_triangles == 20
    assert mesh.is_watertight()


def test_sphere_area_close_to_4pi():
    mesh = mesh_ellipsoid(UNIT_SPHERE, target_edge_length=0.3)
    assert mesh.triangle_areas.sum() == pytest.approx(4.0 * np.pi, rel=0.05)


def test_sphere_area_converges_with_depth():
    errors = [abs(mesh_ellipsoid(UNIT_SPHERE, 10.0, depth=d).triangle_areas.sum() - 4.0 * np.pi) for d in range(5)]
    assert all(fine < coarse for coarse, fine in zip(errors, errors[1:]))
    assert errors[-1] < 0.02


def test_translated_sphere_vertices_on_surface():
    sphere = Ellipsoid(center=[2.0, 0.0, 0.0], semi_axes=[1.0, 1.0, 1.0])
    mesh = mesh_ellipsoid(sphere, target_edge_length=0.5)
    radii = np.linalg.norm(mesh.vertices - np.array([2.0, 0.0, 0.0]), axis=1)
    np.testing.assert_allclose(radii, 1.0, atol=1e-12)


def test_faces_and_normals_point_outward():
    ellipsoid = Ellipsoid(center=[0.5, -1.0, 0.0], semi_axes=[1.2, 0.4, 0.7])
    mesh = mesh_ellipsoid(ellipsoid, target_edge_length=0.4)
    outward = mesh.triangle_centroids - ellipsoid.center
    assert np.all(np.einsum("ij,ij->i", mesh.triangle_normals(), outward) > 0.0)
    radial = mesh.vertices - ellipsoid.center
    assert np.all(np.einsum("ij,ij->i", mesh.vertex_normals, radial) > 0.0)
    np.testing.assert_allclose(np.linalg.norm(mesh.vertex_normals, axis=1), 1.0, atol=1e-12)


def test_icosphere_arrays_are_read_only():
    vertices, faces = unit_icosphere(1)
    assert len(vertices) == 42
    assert len(faces) == 80
    with pytest.raises(ValueError):
        vertices[0, 0] = 0.0


def test_subdivision_cap_raises():
    with pytest.raises(MeshingError):
        mesh_ellipsoid(UNIT_SPHERE, target_edge_length=1e-3, max_depth=2)


def test_single_obstacle_scene_inside_box():
    for seed in range(5):
        scene = sample_scene(1, seed, target_edge_length=0.6)
        assert scene.n_obstacles == 1
        assert np.all(np.abs(scene.mesh.vertices) <= ENVIRONMENT_HALF_EXTENT)


def test_scene_sampling_is_deterministic():
    a = sample_scene(3, 7, target_edge_length=0.5)
    b = sample_scene(3, 7, target_edge_length=0.5)
    np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
    np.testing.assert_array_equal(a.mesh.triangles, b.mesh.triangles)
    for ea, eb in zip(a.ellipsoids, b.ellipsoids):
        np.testing.assert_array_equal(ea.semi_axes, eb.semi_axes)


def test_obstacles_never_overlap():
    for seed in range(100):
        scene = sample_scene(3, seed, target_edge_length=2.0)
        ellipsoids = scene.ellipsoids
        for i in range(3):
            for j in range(i + 1, 3):
                gap = np.linalg.norm(ellipsoids[i].center - ellipsoids[j].center)
                assert gap > ellipsoids[i].bounding_radius + ellipsoids[j].bounding_radius + 0.05


def test_every_obstacle_mesh_is_watertight():
    scene = sample_scene(3, 11, target_edge_length=0.6)
    mesh = scene.mesh
    assert mesh.is_watertight()
    assert mesh.n_obstacles == 3
    # obstacle ids stay consistent between vertices and triangles
    np.testing.assert_array_equal(mesh.vertex_obstacle[mesh.triangles[:, 0]], mesh.triangle_obstacle)


def test_crowded_scene_raises():
    with pytest.raises(SceneSamplingError):
        sample_scene(40, 0, target_edge_length=2.0, semi_axis_range=(1.4, 1.5), max_rejections=200)


def test_winding_number_inside_outside():
    scene = build_scene([UNIT_SPHERE, Ellipsoid(center=[3.0, 0.0, 0.0], semi_axes=[0.5, 0.5, 0.5])], 0.4)
    points = np.array([[0.0, 0.0, 0.0], [3.0, 0.1, 0.0], [1.8, 0.0, 0.0], [0.0, 4.0, 0.0]])
    wn = winding_number(scene.mesh, points)
    np.testing.assert_allclose(wn, [1.0, 1.0, 0.0, 0.0], atol=1e-8)
    np.testing.assert_array_equal(points_inside_mesh(scene.mesh, points), [True, True, False, False])
    np.testing.assert_array_equal(scene.contains(points), [True, True, False, False])
