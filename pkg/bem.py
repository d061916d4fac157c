"""
Dense single-layer boundary element solver.

Collocation at triangle centroids with piecewise-constant densities, full GMRES,
and single-layer potential evaluation off the boundary.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from geometry import TriangleMesh, points_inside_mesh
from utils import ordered_map, row_blocks, unit_vectors

FOUR_PI = 4.0 * np.pi

# Near-field switch: points within factor * diameter of a triangle use the singular split
ASSEMBLY_NEAR_FACTOR = 2.0
POTENTIAL_NEAR_FACTOR = 1.0

# Entries (rows * triangles * quadrature nodes) handled per block
BLOCK_BUDGET = 3_000_000

# Symmetric 7-point rule on the reference triangle (degree 5); barycentric nodes, weights sum to 1
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_BARYCENTRIC = np.array([
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_WEIGHTS = np.array([
    0.225,
    0.132394152788506, 0.132394152788506, 0.132394152788506,
    0.125939180544827, 0.125939180544827, 0.125939180544827,
])


class SingularityError(ValueError):
    pass


class AssemblyError(RuntimeError):
    pass


class SolverConvergenceError(RuntimeError):
    """GMRES stopped at ``max_iter`` above tolerance; the best iterate is attached."""

    def __init__(self, message: str, trace: "BoundaryTrace", report: "GmresReport"):
        super().__init__(message)
        self.trace = trace
        self.report = report


@dataclass(frozen=True)
class Kernel:
    variant: str = "laplace"
    wavenumber: float = 0.0

    def __post_init__(self):
        if self.variant not in ("laplace", "helmholtz"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "helmholtz" and not self.wavenumber > 0.0:
            raise ValueError(f"Helmholtz kernel needs k > 0, got {self.wavenumber}")
        if self.variant == "laplace" and self.wavenumber != 0.0:
            raise ValueError("Laplace kernel takes no wavenumber")

    @classmethod
    def laplace(cls) -> "Kernel":
        return cls("laplace", 0.0)

    @classmethod
    def helmholtz(cls, wavenumber: float) -> "Kernel":
        return cls("helmholtz", float(wavenumber))

    @classmethod
    def for_wavenumber(cls, wavenumber: float) -> "Kernel":
        """k = 0 is the Laplace kernel."""
        return cls.laplace() if wavenumber == 0.0 else cls.helmholtz(wavenumber)

    @property
    def is_helmholtz(self) -> bool:
        return self.variant == "helmholtz"

    def __call__(self, r: np.ndarray) -> np.ndarray:
        """G at distance ``r`` (> 0): -1/(4 pi r) or the outgoing -exp(ikr)/(4 pi r)."""
        r = np.asarray(r, dtype=np.float64)
        if self.is_helmholtz:
            return -np.exp(1j * self.wavenumber * r) / (FOUR_PI * r)
        return (-1.0 / (FOUR_PI * r)).astype(np.complex128)

    def smooth_remainder(self, r: np.ndarray) -> np.ndarray:
        """G - G_static, continued by its limit -ik/(4 pi) at r = 0."""
        r = np.asarray(r, dtype=np.float64)
        if not self.is_helmholtz:
            return np.zeros(r.shape, dtype=np.complex128)
        k = self.wavenumber
        zero = r == 0.0
        safe = np.where(zero, 1.0, r)
        return np.where(zero, -1j * k / FOUR_PI, -np.expm1(1j * k * safe) / (FOUR_PI * safe))


def greens(kernel: Kernel, x, y) -> complex:
    """Green's function between two points."""
    r = float(np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)))
    if r == 0.0:
        raise SingularityError("Green's function evaluated at coincident points")
    return complex(kernel(r))


@dataclass
class BoundaryTrace:
    values: np.ndarray            # per vertex
    triangle_values: np.ndarray   # per triangle (collocation density)
    mesh: TriangleMesh = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        self.triangle_values = np.asarray(self.triangle_values, dtype=np.complex128)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError(f"trace has {self.values.shape} values for {self.mesh.n_vertices} vertices")


@dataclass
class GmresReport:
    iterations: int
    final_relative_residual: float
    converged: bool
    residual_history: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_relative_residual": float(self.final_relative_residual),
            "converged": bool(self.converged),
        }


# ---------------------------------------------------------------------------
# Vertex <-> triangle transfer
# ---------------------------------------------------------------------------
def triangle_to_vertex(mesh: TriangleMesh, triangle_values: np.ndarray) -> np.ndarray:
    """Area-weighted average of the densities of the triangles around each vertex."""
    incidence = mesh.vertex_incidence()
    weights = np.asarray(incidence.sum(axis=1)).reshape(-1)
    return (incidence @ np.asarray(triangle_values, dtype=np.complex128)) / weights


def vertex_to_triangle(mesh: TriangleMesh, vertex_values: np.ndarray) -> np.ndarray:
    """Mean of a triangle's three vertex values."""
    return np.asarray(vertex_values, dtype=np.complex128)[mesh.triangles].mean(axis=1)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------
def triangle_quadrature(mesh: TriangleMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Physical 7-point nodes (M, 7, 3) and weights scaled by area (M, 7)."""
    nodes = np.einsum("qk,mkd->mqd", QUAD_BARYCENTRIC, mesh.triangle_corners())
    weights = mesh.triangle_areas[:, None] * QUAD_WEIGHTS[None, :]
    return nodes, weights


def inverse_distance_integral(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """
    Closed-form integral of 1/|x - y| over flat triangles.

    Args:
        points: (K, 3) observation points
        corners: (K, 3, 3) triangle corners, paired row by row with ``points``

    Returns:
        np.ndarray: (K,) values of the integral over each triangle
    """
    points = np.asarray(points, dtype=np.float64)
    v0, v1, v2 = corners[:, 0], corners[:, 1], corners[:, 2]
    normal = unit_vectors(np.cross(v1 - v0, v2 - v0))
    height = np.einsum("kd,kd->k", points - v0, normal)
    abs_height = np.abs(height)

    total = np.zeros(len(points))
    for start, end in ((v0, v1), (v1, v2), (v2, v0)):
        edge = end - start
        length = np.linalg.norm(edge, axis=1)
        tangent = edge / length[:, None]
        outward = np.cross(tangent, normal)
        offset = start - points
        s_minus = np.einsum("kd,kd->k", offset, tangent)
        s_plus = s_minus + length
        p0 = np.einsum("kd,kd->k", offset, outward)
        r_minus = np.linalg.norm(offset, axis=1)
        r_plus = np.linalg.norm(end - points, axis=1)
        r0_sq = p0 ** 2 + height ** 2
        r0 = np.sqrt(r0_sq)
        # Points on the edge's supporting line contribute nothing
        on_line = r0 <= 1e-14 * length
        safe_r0 = np.where(on_line, 1.0, r0)
        log_term = p0 * (np.arcsinh(s_plus / safe_r0) - np.arcsinh(s_minus / safe_r0))
        angle_term = abs_height * (
            np.arctan2(p0 * s_plus, r0_sq + abs_height * r_plus)
            - np.arctan2(p0 * s_minus, r0_sq + abs_height * r_minus)
        )
        total += np.where(on_line, 0.0, log_term - angle_term)
    return total


def _near_pair_integrals(kernel: Kernel, points: np.ndarray, corners: np.ndarray,
                         nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Singular split: analytic static part plus 7-point smooth remainder, pair by pair."""
    static = -inverse_distance_integral(points, corners) / FOUR_PI
    if not kernel.is_helmholtz:
        return static.astype(np.complex128)
    r = np.linalg.norm(nodes - points[:, None, :], axis=2)
    return static + (kernel.smooth_remainder(r) * weights).sum(axis=1)


def near_switch_distance(mesh: TriangleMesh, near_factor: float) -> np.ndarray:
    """
    Per-triangle centroid distance below which the singular split is used.

    Covers every point within ``near_factor`` diameters of the triangle itself: the
    triangle's distance is at least the centroid distance minus its centroid-to-corner radius.
    """
    corners = mesh.triangle_corners()
    radius = np.linalg.norm(corners - mesh.triangle_centroids[:, None, :], axis=2).max(axis=1)
    return near_factor * mesh.triangle_diameters() + radius


def _single_layer_block(kernel: Kernel, points: np.ndarray, mesh: TriangleMesh,
                        nodes: np.ndarray, weights: np.ndarray, reach: np.ndarray) -> np.ndarray:
    """(P, M) matrix of integrals of G(x_p - y) over each triangle."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.linalg.norm(points[:, None, None, :] - nodes[None, :, :, :], axis=3)
        block = (kernel(r) * weights[None, :, :]).sum(axis=2)

    centroid_distance = np.linalg.norm(points[:, None, :] - mesh.triangle_centroids[None, :, :], axis=2)
    near_rows, near_cols = np.nonzero(centroid_distance < reach[None, :])
    if len(near_rows):
        block[near_rows, near_cols] = _near_pair_integrals(
            kernel, points[near_rows], mesh.triangle_corners()[near_cols], nodes[near_cols], weights[near_cols]
        )
    return block


def _integrate_rows(kernel: Kernel, points: np.ndarray, mesh: TriangleMesh, near_factor: float, threads: int) -> np.ndarray:
    nodes, weights = triangle_quadrature(mesh)
    reach = near_switch_distance(mesh, near_factor)
    rows_per_block = max(1, BLOCK_BUDGET // (len(QUAD_WEIGHTS) * max(1, mesh.n_triangles)))
    blocks = row_blocks(len(points), rows_per_block)
    parts = ordered_map(
        lambda rows: _single_layer_block(kernel, points[rows], mesh, nodes, weights, reach),
        blocks,
        threads=threads,
    )
    if not parts:
        return np.zeros((0, mesh.n_triangles), dtype=np.complex128)
    return np.vstack(parts)


def assemble_single_layer(mesh: TriangleMesh, kernel: Kernel, near_factor: float = ASSEMBLY_NEAR_FACTOR,
                          threads: int = 1) -> np.ndarray:
    """
    Collocation matrix A[i, j] = integral over triangle j of G(c_i - y).

    Raises:
        AssemblyError: If any entry comes out non-finite
    """
    if mesh.n_triangles == 0:
        raise AssemblyError("cannot assemble an empty mesh")
    matrix = _integrate_rows(kernel, mesh.triangle_centroids, mesh, near_factor, threads)
    bad = ~np.isfinite(matrix)
    if bad.any():
        i, j = (int(v) for v in np.argwhere(bad)[0])
        raise AssemblyError(f"non-finite single-layer entry for collocation triangle {i} and source triangle {j}")
    logging.debug(f"Assembled {matrix.shape[0]}x{matrix.shape[1]} {kernel.variant} single-layer matrix")
    return matrix


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------
def _as_operator(matvec: Union[np.ndarray, LinearOperator, Callable], n: int) -> LinearOperator:
    if callable(matvec) and not isinstance(matvec, LinearOperator):
        return LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
    return aslinearoperator(matvec)


def gmres(matvec, b: np.ndarray, rtol: float = 1e-5, max_iter: int = 500) -> Tuple[np.ndarray, GmresReport]:
    """
    Full (non-restarted) GMRES with modified Gram-Schmidt and Givens rotations.

    Args:
        matvec: Matrix, scipy LinearOperator or callable ``x -> A @ x``
        b: Right-hand side
        rtol: Stop once ||b - A x|| / ||b|| <= rtol
        max_iter: Krylov dimension cap

    Returns:
        tuple: (solution, GmresReport); on non-convergence the last (best) iterate
    """
    if rtol <= 0:
        raise ValueError(f"rtol must be > 0, got {rtol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    b = np.asarray(b, dtype=np.complex128).reshape(-1)
    n = b.size
    operator = _as_operator(matvec, n)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return np.zeros(n, dtype=np.complex128), GmresReport(0, 0.0, True, [0.0])

    max_iter = min(max_iter, n) if n > 0 else max_iter
    basis = np.zeros((n, max_iter + 1), dtype=np.complex128)
    hessenberg = np.zeros((max_iter + 1, max_iter), dtype=np.complex128)
    cosines = np.zeros(max_iter, dtype=np.complex128)
    sines = np.zeros(max_iter, dtype=np.complex128)
    rhs = np.zeros(max_iter + 1, dtype=np.complex128)
    rhs[0] = beta
    basis[:, 0] = b / beta

    history = [1.0]
    steps = 0
    relative = 1.0
    for j in range(max_iter):
        w = np.asarray(operator.matvec(basis[:, j]), dtype=np.complex128).reshape(-1)
        for i in range(j + 1):
            hessenberg[i, j] = np.vdot(basis[:, i], w)
            w = w - hessenberg[i, j] * basis[:, i]
        h_next = float(np.linalg.norm(w))
        hessenberg[j + 1, j] = h_next
        breakdown = h_next <= 1e-14 * beta
        if not breakdown:
            basis[:, j + 1] = w / h_next

        for i in range(j):
            upper, lower = hessenberg[i, j], hessenberg[i + 1, j]
            hessenberg[i, j] = np.conj(cosines[i]) * upper + np.conj(sines[i]) * lower
            hessenberg[i + 1, j] = -sines[i] * upper + cosines[i] * lower
        diagonal, below = hessenberg[j, j], hessenberg[j + 1, j]
        radius = float(np.hypot(abs(diagonal), abs(below)))
        if radius == 0.0:
            cosines[j], sines[j] = 1.0, 0.0
        else:
            cosines[j], sines[j] = diagonal / radius, below / radius
        hessenberg[j, j] = radius
        hessenberg[j + 1, j] = 0.0
        head = rhs[j]
        rhs[j] = np.conj(cosines[j]) * head
        rhs[j + 1] = -sines[j] * head

        steps = j + 1
        relative = float(abs(rhs[j + 1])) / beta
        history.append(relative)
        if relative <= rtol or breakdown:
            break

    coefficients = solve_triangular(hessenberg[:steps, :steps], rhs[:steps])
    solution = basis[:, :steps] @ coefficients
    report = GmresReport(steps, relative, relative <= rtol, history)
    if not report.converged:
        logging.warning(f"GMRES stopped after {steps} iterations at relative residual {relative:.3e} (rtol {rtol:.1e})")
    return solution, report


# ---------------------------------------------------------------------------
# Solve and represent
# ---------------------------------------------------------------------------
def solve_dirichlet(mesh: TriangleMesh, kernel: Kernel, dirichlet_values_at_centroids: np.ndarray,
                    rtol: float = 1e-5, max_iter: int = 500, threads: int = 1,
                    matrix: Optional[np.ndarray] = None) -> Tuple[BoundaryTrace, GmresReport]:
    """
    Solve S p = u at the collocation points.

    Raises:
        SolverConvergenceError: GMRES did not reach ``rtol``
    """
    rhs = np.asarray(dirichlet_values_at_centroids, dtype=np.complex128).reshape(-1)
    if rhs.size != mesh.n_triangles:
        raise ValueError(f"right-hand side has {rhs.size} entries for {mesh.n_triangles} triangles")
    if matrix is None:
        matrix = assemble_single_layer(mesh, kernel, threads=threads)
    density, report = gmres(matrix, rhs, rtol=rtol, max_iter=max_iter)
    trace = BoundaryTrace(values=triangle_to_vertex(mesh, density), triangle_values=density, mesh=mesh)
    if not report.converged:
        raise SolverConvergenceError(
            f"GMRES did not converge: residual {report.final_relative_residual:.3e} after {report.iterations} iterations",
            trace, report,
        )
    return trace, report


def evaluate_single_layer_potential(mesh: TriangleMesh, kernel: Kernel, trace_per_triangle: np.ndarray,
                                    points: np.ndarray, near_factor: float = POTENTIAL_NEAR_FACTOR,
                                    threads: int = 1, inside: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Single-layer potential u(x) = sum_j p_j * integral over T_j of G(x - y).

    Points inside an obstacle come back as NaN. ``inside`` may be supplied to skip the
    winding-number test.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    density = np.asarray(trace_per_triangle, dtype=np.complex128).reshape(-1)
    if density.size != mesh.n_triangles:
        raise ValueError(f"density has {density.size} entries for {mesh.n_triangles} triangles")
    if inside is None:
        inside = points_inside_mesh(mesh, points)
    values = np.full(len(points), np.nan + 1j * np.nan, dtype=np.complex128)
    outside = ~np.asarray(inside, dtype=bool)
    if outside.any():
        values[outside] = _integrate_rows(kernel, points[outside], mesh, near_factor, threads) @ density
    return values
