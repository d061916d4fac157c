import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import FeatureConfig
from features import (
    build_features,
    edge_feature_dim,
    edge_features,
    node_feature_dim,
    node_features,
    pe_wavelengths,
    sinusoidal_pe,
)
from geometry import Ellipsoid, build_scene
from graphs import build_multiscale_graphs
from problems import ProblemSpec

CFG = FeatureConfig()
EZ = (0.0, 0.0, 1.0)

HELMHOLTZ = ProblemSpec(variant="helmholtz_dirichlet", x0=(0.0, 0.0, 0.0), k=2 * np.pi)
LAPLACE = ProblemSpec(variant="laplace_dirichlet", x0=(0.0, 0.0, 0.0), v=EZ, phi=(1.0, 0.0, 0.0))
NEUMANN = ProblemSpec(variant="helmholtz_neumann", v=EZ, k=1.5)


def test_pe_at_zero_distance():
    pe = sinusoidal_pe(np.array([0.0]), CFG)[0]
    assert pe.shape == (16,)
    np.testing.assert_array_equal(pe[0::2], 0.0)
    np.testing.assert_array_equal(pe[1::2], 1.0)


def test_pe_full_period_of_shortest_wavelength():
    pe = sinusoidal_pe(np.array([CFG.pe_min_wavelength]), CFG)[0]
    np.testing.assert_allclose(pe[:2], [0.0, 1.0], atol=1e-12)


def test_pe_ladder():
    wavelengths = pe_wavelengths(CFG)
    assert wavelengths[0] == pytest.approx(0.1)
    assert wavelengths[-1] == pytest.approx(20.0)
    ratios = wavelengths[1:] / wavelengths[:-1]
    np.testing.assert_allclose(ratios, ratios[0])
    np.testing.assert_array_equal(pe_wavelengths(FeatureConfig(pe_pairs=1)), [0.1])


def test_pe_rejects_negative_distance():
    with pytest.raises(ValueError):
        sinusoidal_pe(np.array([-1.0]), CFG)


def test_feature_dimensions():
    assert node_feature_dim("helmholtz_dirichlet", CFG) == 22
    assert node_feature_dim("laplace_dirichlet", CFG) == 25
    assert node_feature_dim("helmholtz_neumann", CFG) == 25
    assert edge_feature_dim("laplace_dirichlet", CFG) == 19
    assert edge_feature_dim("helmholtz_dirichlet", CFG) == 22
    assert edge_feature_dim("helmholtz_neumann", CFG) == 22
    points = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    for problem in (HELMHOLTZ, LAPLACE, NEUMANN):
        assert node_features(problem, points, CFG).shape == (2, node_feature_dim(problem.variant, CFG))


def test_dirichlet_phase_pair_at_unit_distance():
    features = node_features(HELMHOLTZ, np.array([[0.0, 1.0, 0.0]]), CFG)[0]
    np.testing.assert_allclose(features[-2:], [0.0, 1.0], atol=1e-12)
    assert features[-3] == pytest.approx(2 * np.pi)
    # unit vector towards the source
    np.testing.assert_allclose(features[16:19], [0.0, -1.0, 0.0])


def test_laplace_boundary_terms():
    features = node_features(LAPLACE, np.array([[3.0, 0.0, 0.0], [0.0, 0.0, -2.0]]), CFG)
    np.testing.assert_allclose(features[:, -3:], [[-1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    np.testing.assert_allclose(features[:, 19:22], [EZ, EZ])


def test_neumann_features_point_to_mean():
    points = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    features = node_features(NEUMANN, points, CFG)
    np.testing.assert_allclose(features[:, :3], [EZ, EZ])
    np.testing.assert_allclose(features[:, -3:], [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def test_edge_full_wavelength_pair():
    k = 2.5
    problem = ProblemSpec(variant="helmholtz_dirichlet", x0=(5.0, 5.0, 5.0), k=k)
    features = edge_features(problem, np.array([[2 * np.pi / k, 0.0, 0.0]]), CFG)[0]
    np.testing.assert_allclose(features[-2:], [0.0, 1.0], atol=1e-12)


def test_edge_direction_slot():
    features = edge_features(LAPLACE, np.array([[0.0, 0.0, 2.0]]), CFG)[0]
    assert features.shape == (19,)
    np.testing.assert_allclose(features[16:19], [0.0, 0.0, 1.0])


def test_zero_length_edges():
    with pytest.raises(ValueError):
        edge_features(HELMHOLTZ, np.zeros((1, 3)), CFG)
    features = edge_features(HELMHOLTZ, np.zeros((1, 3)), CFG, allow_coincident=True)[0]
    np.testing.assert_array_equal(features[16:19], 0.0)


def test_rotation_equivariance():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rotation = q * np.sign(np.linalg.det(q))
    points = rng.uniform(-4, 4, size=(30, 3))
    vectors = rng.standard_normal((30, 3))
    problem = ProblemSpec(variant="laplace_dirichlet", x0=(4.5, 0.5, -4.5), v=(0.6, 0.0, 0.8), phi=(0.2, -0.4, 0.9))

    base = node_features(problem, points, CFG)
    turned = node_features(problem.rotated(rotation), points @ rotation.T, CFG)
    scalar = np.r_[0:16, 22:25]
    np.testing.assert_allclose(turned[:, scalar], base[:, scalar], atol=1e-10)
    np.testing.assert_allclose(turned[:, 16:19], base[:, 16:19] @ rotation.T, atol=1e-12)
    np.testing.assert_allclose(turned[:, 19:22], base[:, 19:22] @ rotation.T, atol=1e-12)

    edge_base = edge_features(HELMHOLTZ, vectors, CFG)
    edge_turned = edge_features(HELMHOLTZ.rotated(rotation), vectors @ rotation.T, CFG)
    scalar = np.r_[0:16, 19:22]
    np.testing.assert_allclose(edge_turned[:, scalar], edge_base[:, scalar], atol=1e-10)
    np.testing.assert_allclose(edge_turned[:, 16:19], edge_base[:, 16:19] @ rotation.T, atol=1e-12)


def test_build_features_matches_graphs():
    scene = build_scene([
        Ellipsoid(center=[-1.5, 0.0, 0.0], semi_axes=[0.8, 0.8, 0.8]),
        Ellipsoid(center=[1.5, 0.5, 0.0], semi_axes=[0.6, 0.9, 0.7]),
    ], target_edge_length=0.5)
    graphs = build_multiscale_graphs(scene.mesh, levels=2, target_edge_length=0.5, base_cell=0.25, rng_seed=1)
    features = build_features(HELMHOLTZ.model_copy(update={"x0": (0.0, 4.0, 0.0)}), graphs, CFG)
    assert features.node.shape == (scene.mesh.n_vertices, 22)
    assert features.boundary_edges.shape == (graphs.boundary.n_edges, 22)
    assert [e.shape[0] for e in features.down_edges] == [g.n_edges for g in graphs.down]
    assert [e.shape[0] for e in features.up_edges] == [g.n_edges for g in graphs.up]
    assert features.distant_edges.shape == (graphs.distant.n_edges, 22)
    assert features.node_dim == 22 and features.edge_dim == 22
