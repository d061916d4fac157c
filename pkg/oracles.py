"""
Closed-form checks of the BEM engine, shared by ``main.py selftest`` and the test-suite.
"""

import logging
import time
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from bem import Kernel, evaluate_single_layer_potential, gmres, solve_dirichlet
from geometry import Ellipsoid, mesh_ellipsoid


@dataclass
class OracleResult:
    name: str
    error: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def sphere_laplace_oracle(target_edge_length: float = 0.3, radius: float = 1.0, threads: int = 1) -> List[OracleResult]:
    """
    Sphere of radius a with u = 1 on the boundary: density -1/a, exterior potential a/R.
    """
    start = time.perf_counter()
    sphere = Ellipsoid(center=np.zeros(3), semi_axes=np.full(3, radius))
    mesh = mesh_ellipsoid(sphere, target_edge_length)
    kernel = Kernel.laplace()
    trace, _ = solve_dirichlet(mesh, kernel, np.ones(mesh.n_triangles), threads=threads)
    density_error = float(np.max(np.abs(trace.triangle_values.real * radius + 1.0)))

    observer = np.array([[2.0 * radius, 0.0, 0.0]])
    u = evaluate_single_layer_potential(mesh, kernel, trace.triangle_values, observer, threads=threads)[0]
    potential_error = float(abs(u.real - 0.5) / 0.5)
    seconds = time.perf_counter() - start
    return [
        OracleResult("sphere density", density_error, 0.02, seconds),
        OracleResult("sphere potential R=2a", potential_error, 0.02, seconds),
    ]


def manufactured_helmholtz_oracle(wavenumber: float = 3.0, radius: float = 0.8, target_edge_length: float = 0.15,
                                  n_points: int = 20, seed: int = 0, threads: int = 1) -> List[OracleResult]:
    """
    Boundary data of a point source inside a sphere; the exterior field must reproduce the source.

    ``radius * wavenumber`` stays below pi so the single-layer operator is away from the
    first interior Dirichlet resonance.
    """
    start = time.perf_counter()
    sphere = Ellipsoid(center=np.zeros(3), semi_axes=np.full(3, radius))
    mesh = mesh_ellipsoid(sphere, target_edge_length)
    kernel = Kernel.helmholtz(wavenumber)
    interior_source = np.array([0.2, -0.1, 0.15]) * radius

    def exact(points: np.ndarray) -> np.ndarray:
        return kernel(np.linalg.norm(points - interior_source, axis=1))

    trace, _ = solve_dirichlet(mesh, kernel, exact(mesh.triangle_centroids), rtol=1e-8, threads=threads)

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_points, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    observers = directions * rng.uniform(2.2, 4.8, size=(n_points, 1))
    field = evaluate_single_layer_potential(mesh, kernel, trace.triangle_values, observers, threads=threads)
    expected = exact(observers)
    field_error = float(np.max(np.abs(field - expected) / np.abs(expected)))

    # Ray perpendicular to the source offset so |u| R is flat up to O(|x_int|^2 / R^2)
    across = np.cross(interior_source, directions[0])
    radii = np.linspace(3.0, 6.0, 7)
    ray = radii[:, None] * (across / np.linalg.norm(across))
    decay = np.abs(evaluate_single_layer_potential(mesh, kernel, trace.triangle_values, ray, threads=threads)) * radii
    radiation_spread = float((decay.max() - decay.min()) / decay.mean())
    seconds = time.perf_counter() - start
    return [
        OracleResult("manufactured Helmholtz field", field_error, 0.02, seconds),
        OracleResult("radiation |u|R spread", radiation_spread, 0.05, seconds),
    ]


def gmres_lu_oracle(size: int = 20, trials: int = 5, seed: int = 0) -> OracleResult:
    """GMRES at rtol 1e-10 against a dense LU solve on random well-conditioned complex systems."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        noise = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        matrix = 3.0 * np.eye(size) + noise / np.sqrt(2.0 * size)
        rhs = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        x, _ = gmres(matrix, rhs, rtol=1e-10, max_iter=size)
        direct = lu_solve(lu_factor(matrix), rhs)
        worst = max(worst, float(np.max(np.abs(x - direct))))
    return OracleResult("GMRES vs LU", worst, 1e-8, time.perf_counter() - start)


def run_selftest(threads: int = 1) -> List[OracleResult]:
    results = sphere_laplace_oracle(threads=threads)
    results += manufactured_helmholtz_oracle(threads=threads)
    results.append(gmres_lu_oracle())
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        logging.info(f"{status} {result.name}: error {result.error:.3e} (tolerance {result.tolerance:.0e}, {result.seconds:.1f}s)")
    return results
