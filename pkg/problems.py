"""
Boundary conditions and incident fields for the three scattering problems.

Variants:
    laplace_dirichlet     u = -phi0 - phi1/r - 2 phi2 v.(x - x0)/r
    helmholtz_dirichlet   u = -exp(ik r)/r            (monopole at x0)
    helmholtz_neumann     du/dn = -ik exp(ik x.v)     (unit plane wave along v)
"""

from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from bem import Kernel, SingularityError
from geometry import Scene

Variant = Literal["laplace_dirichlet", "helmholtz_dirichlet", "helmholtz_neumann"]
VARIANTS = ("laplace_dirichlet", "helmholtz_dirichlet", "helmholtz_neumann")
DIRICHLET_VARIANTS = ("laplace_dirichlet", "helmholtz_dirichlet")

# Sampling ranges
WAVELENGTH_RANGE = (0.6, 6.0)
PHI_RANGE = (-1.0, 1.0)
SOURCE_MARGIN = 0.1
MAX_SOURCE_REJECTIONS = 10_000

Vector = Tuple[float, float, float]


class ProblemSamplingError(RuntimeError):
    pass


class ProblemSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: Variant
    x0: Optional[Vector] = None
    v: Optional[Vector] = None
    k: Optional[float] = None
    phi: Optional[Vector] = None

    @model_validator(mode="after")
    def check_fields(self):
        required = {
            "laplace_dirichlet": ("x0", "v", "phi"),
            "helmholtz_dirichlet": ("x0", "k"),
            "helmholtz_neumann": ("v", "k"),
        }[self.variant]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.variant} needs {', '.join(missing)}")
        if self.v is not None and abs(float(np.linalg.norm(self.v)) - 1.0) > 1e-12:
            raise ValueError(f"v must be a unit vector, |v| = {np.linalg.norm(self.v)}")
        if self.k is not None and not self.k > 0.0:
            raise ValueError(f"k must be > 0, got {self.k}")
        return self

    @property
    def is_helmholtz(self) -> bool:
        return self.variant != "laplace_dirichlet"

    @property
    def is_complex(self) -> bool:
        return self.is_helmholtz

    @property
    def wavenumber(self) -> float:
        return float(self.k) if self.k is not None else 0.0

    @property
    def kernel(self) -> Kernel:
        return Kernel.for_wavenumber(self.wavenumber)

    @property
    def source(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=np.float64)

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.v, dtype=np.float64)

    def rotated(self, rotation: np.ndarray) -> "ProblemSpec":
        """Same problem after a rigid rotation of space about the origin."""
        updates = {}
        if self.x0 is not None:
            updates["x0"] = tuple(float(c) for c in rotation @ self.source)
        if self.v is not None:
            direction = rotation @ self.direction
            updates["v"] = tuple(float(c) for c in direction / np.linalg.norm(direction))
        return self.model_copy(update=updates)


def _distances(spec: ProblemSpec, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    offsets = np.asarray(points, dtype=np.float64).reshape(-1, 3) - spec.source
    r = np.linalg.norm(offsets, axis=1)
    if np.any(r == 0.0):
        raise SingularityError(f"boundary condition evaluated at the source location {list(spec.x0)}")
    return offsets, r


def dirichlet_monopole_bc(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    _, r = _distances(spec, points)
    return -np.exp(1j * spec.wavenumber * r) / r


def neumann_planewave_bc(spec: ProblemSpec, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Normal-derivative data -ik exp(ik x.v); ``normals`` only have their shape checked."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64)
    if normals.shape != points.shape:
        raise ValueError(f"normals shape {normals.shape} does not match points shape {points.shape}")
    k = spec.wavenumber
    return -1j * k * np.exp(1j * k * (points @ spec.direction))


def laplace_dirichlet_bc(spec: ProblemSpec, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Laplace Dirichlet data and its three terms.

    Returns:
        tuple: (values (N,), terms (N, 3)) where values == terms.sum(axis=1)
    """
    offsets, r = _distances(spec, points)
    phi0, phi1, phi2 = spec.phi
    terms = np.stack([
        np.full(len(r), -phi0),
        -phi1 / r,
        -2.0 * phi2 * (offsets @ spec.direction) / r,
    ], axis=1)
    return terms.sum(axis=1), terms


def incident_field(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    """Incident field such that u = -u_inc on the boundary for both Dirichlet problems."""
    if spec.variant == "helmholtz_dirichlet":
        return -dirichlet_monopole_bc(spec, points)
    if spec.variant == "helmholtz_neumann":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.exp(1j * spec.wavenumber * (points @ spec.direction))
    values, _ = laplace_dirichlet_bc(spec, points)
    return (-values).astype(np.complex128)


def dirichlet_values(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    """Right-hand side of the first-kind equation S p = u."""
    if spec.variant == "helmholtz_dirichlet":
        return dirichlet_monopole_bc(spec, points)
    if spec.variant == "laplace_dirichlet":
        return laplace_dirichlet_bc(spec, points)[0].astype(np.complex128)
    raise ValueError(f"{spec.variant} has no Dirichlet data")


def _unit_direction(rng: np.random.Generator) -> Vector:
    while True:
        draw = rng.standard_normal(3)
        norm = np.linalg.norm(draw)
        if norm > 1e-8:
            return tuple(float(c) for c in draw / norm)


def sample_problem(variant: str, scene: Scene, rng_seed: int, margin: float = SOURCE_MARGIN,
                   max_rejections: int = MAX_SOURCE_REJECTIONS) -> ProblemSpec:
    """
    Draw random boundary-condition parameters for ``scene``.

    The source x0 is uniform in the environment box and redrawn while it falls inside any
    obstacle's bounding sphere grown by ``margin``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown problem variant {variant!r}; choose from {', '.join(VARIANTS)}")
    rng = np.random.default_rng(rng_seed)
    fields = {"variant": variant}

    if variant in DIRICHLET_VARIANTS:
        half = scene.environment_half_extent
        for _ in range(max_rejections):
            x0 = rng.uniform(-half, half, size=3)
            clear = all(
                np.linalg.norm(x0 - e.center) > e.bounding_radius + margin for e in scene.ellipsoids
            )
            if clear:
                fields["x0"] = tuple(float(c) for c in x0)
                break
        else:
            raise ProblemSamplingError(f"seed {rng_seed}: no valid source location after {max_rejections} draws")

    if variant in ("laplace_dirichlet", "helmholtz_neumann"):
        fields["v"] = _unit_direction(rng)
    if variant == "laplace_dirichlet":
        fields["phi"] = tuple(float(c) for c in rng.uniform(PHI_RANGE[0], PHI_RANGE[1], size=3))
    else:
        wavelength = rng.uniform(WAVELENGTH_RANGE[0], WAVELENGTH_RANGE[1])
        fields["k"] = float(2.0 * np.pi / wavelength)
    return ProblemSpec(**fields)
