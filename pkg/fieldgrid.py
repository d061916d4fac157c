"""
Total-field reconstruction on a planar grid and its CSV / PGM / PNG export.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from bem import evaluate_single_layer_potential, vertex_to_triangle
from config import GridSpec
from geometry import Scene
from problems import ProblemSpec, incident_field


@dataclass
class FieldGrid:
    spec: GridSpec
    xs: np.ndarray          # (n,) cell-center x coordinates
    ys: np.ndarray          # (n,) cell-center y coordinates
    total: np.ndarray       # (n, n) complex, indexed [iy, ix]; NaN where masked
    incident: np.ndarray    # (n, n) complex
    mask: np.ndarray        # (n, n) bool, True inside an obstacle

    @property
    def scattered(self) -> np.ndarray:
        return self.total - self.incident

    def difference(self, other: "FieldGrid") -> "FieldGrid":
        """Pointwise error grid self - other (incident part cancels)."""
        if self.total.shape != other.total.shape:
            raise ValueError("field grids have different resolutions")
        return FieldGrid(self.spec, self.xs, self.ys, self.total - other.total,
                         np.zeros_like(self.incident), self.mask | other.mask)


def grid_points(spec: GridSpec) -> tuple:
    """Cell centers of an n x n grid on the plane z = z0."""
    n = spec.resolution
    coords = -0.5 * spec.side + (np.arange(n) + 0.5) * spec.side / n
    gx, gy = np.meshgrid(coords, coords, indexing="xy")
    points = np.stack([gx.ravel(), gy.ravel(), np.full(n * n, spec.z0)], axis=1)
    return coords, coords.copy(), points


def evaluate_field(scene: Scene, problem: ProblemSpec, trace: np.ndarray, spec: GridSpec,
                   threads: int = 1) -> FieldGrid:
    """
    u_tot = S p + u_inc on the grid from a per-vertex trace.

    Cells whose center lies inside an obstacle (or on the source point) are masked.
    """
    xs, ys, points = grid_points(spec)
    mask = scene.contains(points)
    if problem.x0 is not None:
        mask |= np.linalg.norm(points - problem.source, axis=1) < 1e-12

    density = vertex_to_triangle(scene.mesh, trace)
    scattered = evaluate_single_layer_potential(scene.mesh, problem.kernel, density, points, threads=threads, inside=mask)
    incident = np.full(len(points), np.nan + 1j * np.nan, dtype=np.complex128)
    incident[~mask] = incident_field(problem, points[~mask])

    n = spec.resolution
    logging.debug(f"Evaluated field on {n}x{n} grid, {int(mask.sum())} masked cells")
    return FieldGrid(
        spec=spec,
        xs=xs,
        ys=ys,
        total=(scattered + incident).reshape(n, n),
        incident=incident.reshape(n, n),
        mask=mask.reshape(n, n),
    )


def field_frame(grid: FieldGrid) -> pd.DataFrame:
    gx, gy = np.meshgrid(grid.xs, grid.ys, indexing="xy")
    values = grid.total.ravel()
    return pd.DataFrame({
        "x": gx.ravel(),
        "y": gy.ravel(),
        "re": values.real,
        "im": values.imag,
        "abs": np.abs(values),
        "masked": grid.mask.ravel().astype(int),
    })


def magnitude_image(grid: FieldGrid) -> np.ndarray:
    """8-bit |u| scaled linearly between the unmasked min and max; masked cells are 0; row 0 is the top."""
    magnitude = np.abs(grid.total)
    valid = ~grid.mask & np.isfinite(magnitude)
    image = np.zeros(magnitude.shape, dtype=np.uint8)
    if valid.any():
        low, high = magnitude[valid].min(), magnitude[valid].max()
        span = high - low
        scaled = (magnitude - low) / span if span > 0 else np.zeros_like(magnitude)
        image[valid] = np.clip(np.round(scaled[valid] * 255.0), 0, 255).astype(np.uint8)
    return image[::-1]


def export_field(grid: FieldGrid, path, fmt: str = "csv") -> Path:
    """Write the grid as CSV (x, y, re, im, abs, masked), binary PGM of |u|, or a PNG figure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        field_frame(grid).to_csv(path, index=False, float_format="%.10e")
    elif fmt == "pgm":
        image = magnitude_image(grid)
        height, width = image.shape
        path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + image.tobytes())
    elif fmt == "png":
        from plots import plot_field

        plot_field(grid, path)
    else:
        raise ValueError(f"unknown field format {fmt!r}; choose csv, pgm or png")
    logging.info(f"Field written to {path}")
    return path
