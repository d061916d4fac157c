"""
Node and edge input features for the surrogate network.

Scalar slots (positional encodings, wavenumber, phases, boundary-condition terms) are
rotation invariant; direction slots rotate with the scene.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from bem import SingularityError
from config import FeatureConfig
from graphs import MultiscaleGraphSet
from problems import ProblemSpec, laplace_dirichlet_bc
from utils import unit_vectors


@dataclass
class FeatureTensors:
    node: np.ndarray
    boundary_edges: np.ndarray
    down_edges: List[np.ndarray] = field(default_factory=list)
    up_edges: List[np.ndarray] = field(default_factory=list)
    distant_edges: Optional[np.ndarray] = None

    @property
    def node_dim(self) -> int:
        return self.node.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.boundary_edges.shape[1]


def pe_wavelengths(cfg: FeatureConfig) -> np.ndarray:
    """Geometric ladder from ``pe_min_wavelength`` to ``pe_max_wavelength``."""
    if cfg.pe_pairs == 1:
        return np.array([cfg.pe_min_wavelength])
    steps = np.arange(cfg.pe_pairs) / (cfg.pe_pairs - 1)
    return cfg.pe_min_wavelength * (cfg.pe_max_wavelength / cfg.pe_min_wavelength) ** steps


def sinusoidal_pe(distance, cfg: FeatureConfig) -> np.ndarray:
    """(..., 2 * pe_pairs) interleaved sin/cos encodings of non-negative distances."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance < 0.0) or not np.all(np.isfinite(distance)):
        raise ValueError("positional encoding needs finite, non-negative distances")
    angles = 2.0 * np.pi * distance[..., None] / pe_wavelengths(cfg)
    return np.stack([np.sin(angles), np.cos(angles)], axis=-1).reshape(*distance.shape, 2 * cfg.pe_pairs)


def node_feature_dim(variant: str, cfg: FeatureConfig) -> int:
    pe = 2 * cfg.pe_pairs
    return {"helmholtz_dirichlet": pe + 6, "laplace_dirichlet": pe + 9, "helmholtz_neumann": pe + 9}[variant]


def edge_feature_dim(variant: str, cfg: FeatureConfig) -> int:
    return 2 * cfg.pe_pairs + (3 if variant == "laplace_dirichlet" else 6)


def node_features(problem: ProblemSpec, positions: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Per-node input vectors for the boundary graph nodes at ``positions``."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)

    if problem.variant == "helmholtz_neumann":
        k = problem.wavenumber
        phase = k * (positions @ problem.direction)
        to_mean = positions.mean(axis=0) - positions
        return np.concatenate([
            np.broadcast_to(problem.direction, (n, 3)),
            np.full((n, 1), k),
            np.stack([np.sin(phase), np.cos(phase)], axis=1),
            sinusoidal_pe(np.linalg.norm(to_mean, axis=1), cfg),
            unit_vectors(to_mean),
        ], axis=1)

    to_source = problem.source - positions
    r = np.linalg.norm(to_source, axis=1)
    if np.any(r == 0.0):
        raise SingularityError("a node coincides with the source location")
    parts = [sinusoidal_pe(r, cfg), to_source / r[:, None]]
    if problem.variant == "laplace_dirichlet":
        _, terms = laplace_dirichlet_bc(problem, positions)
        parts += [np.broadcast_to(problem.direction, (n, 3)), terms]
    else:
        k = problem.wavenumber
        parts += [np.full((n, 1), k), np.stack([np.sin(k * r), np.cos(k * r)], axis=1)]
    return np.concatenate(parts, axis=1)


def edge_features(problem: ProblemSpec, vectors: np.ndarray, cfg: FeatureConfig,
                  allow_coincident: bool = False) -> np.ndarray:
    """
    Per-edge vectors from edge displacement ``dst - src``.

    Coincident endpoints only occur on transition edges (a node and its own coarse copy); they
    get a zero direction when ``allow_coincident`` is set and raise otherwise.
    """
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
    length = np.linalg.norm(vectors, axis=1)
    if not allow_coincident and np.any(length == 0.0):
        raise ValueError("zero-length edge")
    parts = [sinusoidal_pe(length, cfg), unit_vectors(vectors)]
    if problem.is_helmholtz:
        k = problem.wavenumber
        parts += [np.full((len(length), 1), k), np.stack([np.sin(k * length), np.cos(k * length)], axis=1)]
    return np.concatenate(parts, axis=1)


def build_features(problem: ProblemSpec, graphs: MultiscaleGraphSet, cfg: FeatureConfig) -> FeatureTensors:
    """All node and edge features of one sample's graph hierarchy."""
    distant = None
    if graphs.distant is not None:
        distant = edge_features(problem, graphs.distant.edge_vectors(), cfg)
    return FeatureTensors(
        node=node_features(problem, graphs.boundary.node_positions, cfg),
        boundary_edges=edge_features(problem, graphs.boundary.edge_vectors(), cfg),
        down_edges=[edge_features(problem, g.edge_vectors(), cfg, allow_coincident=True) for g in graphs.down],
        up_edges=[edge_features(problem, g.edge_vectors(), cfg, allow_coincident=True) for g in graphs.up],
        distant_edges=distant,
    )
