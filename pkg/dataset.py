"""
Ground-truth sample generation and the on-disk dataset format.

A dataset directory holds one ``sample_XXXXX.msc`` container per sample and a
``manifest.json`` written once generation has finished.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from bem import BoundaryTrace, GmresReport, SolverConvergenceError, solve_dirichlet, vertex_to_triangle
from container import CountMismatchError, expect_count, read_container, write_container
from geometry import (
    ENVIRONMENT_HALF_EXTENT,
    Ellipsoid,
    MeshingError,
    Scene,
    SceneSamplingError,
    TriangleMesh,
    sample_scene,
)
from problems import DIRICHLET_VARIANTS, ProblemSamplingError, ProblemSpec, dirichlet_values, sample_problem
from utils import ordered_map

SAMPLE_MAGIC = b"MSCAT01\n"
FORMAT_VERSION = 1
GROUND_TRUTH_RTOL = 1e-5
GMRES_MAX_ITER = 500
# Seed shift between successive re-draws of the same sample slot
REDRAW_SEED_STRIDE = 1_000_003
# At most 10% of the slots may be re-drawn (floor, so datasets under 10 samples allow none)
MAX_REDRAW_FRACTION = 0.1
MANIFEST_NAME = "manifest.json"


class DatasetGenerationError(RuntimeError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class SampleRecord:
    scene: Scene
    problem: ProblemSpec
    trace: BoundaryTrace
    gmres_iterations: int
    gmres: Dict = field(default_factory=dict)
    seed: int = 0
    sample_id: int = 0

    @property
    def mesh(self) -> TriangleMesh:
        return self.scene.mesh

    @property
    def wavenumber(self) -> Optional[float]:
        return self.problem.k

    @property
    def variant(self) -> str:
        return self.problem.variant


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    variant: str
    n_samples: int
    n_obstacles: int
    target_edge_length: float
    environment_half_extent: float = ENVIRONMENT_HALF_EXTENT
    seed: int
    files: List[str]
    redraws: int = 0
    trace_mean: Tuple[float, float] = (0.0, 0.0)
    trace_std: Tuple[float, float] = (1.0, 1.0)


def sample_file_name(index: int) -> str:
    return f"sample_{index:05d}.msc"


def problem_seed(scene_seed: int) -> int:
    """Independent stream for the boundary-condition draw of a scene."""
    return int(np.random.SeedSequence([scene_seed, 1]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------
def write_sample(record: SampleRecord, path) -> int:
    """Write one record; returns the file size in bytes."""
    mesh = record.mesh
    is_complex = record.problem.is_complex
    header = {
        "format_version": FORMAT_VERSION,
        "sample_id": int(record.sample_id),
        "seed": int(record.seed),
        "variant": record.problem.variant,
        "problem": record.problem.model_dump(mode="json"),
        "ellipsoids": [e.to_dict() for e in record.scene.ellipsoids],
        "environment_half_extent": float(record.scene.environment_half_extent),
        "target_edge_length": float(record.scene.target_edge_length),
        "n_vertices": int(mesh.n_vertices),
        "n_triangles": int(mesh.n_triangles),
        "is_complex": bool(is_complex),
        "gmres_iterations": int(record.gmres_iterations),
        "gmres": record.gmres,
    }
    arrays = [
        ("vertices", "f8", mesh.vertices),
        ("triangles", "u4", mesh.triangles),
        ("vertex_obstacle", "u4", mesh.vertex_obstacle),
        ("trace_re", "f8", record.trace.values.real),
    ]
    if is_complex:
        arrays.append(("trace_im", "f8", record.trace.values.imag))
    return write_container(path, SAMPLE_MAGIC, header, arrays)


def read_sample(path) -> SampleRecord:
    """
    Read one record.

    Raises:
        BadMagicError, TruncatedPayloadError, CountMismatchError: Malformed file
    """
    header, arrays = read_container(path, SAMPLE_MAGIC)
    n_vertices, n_triangles = int(header["n_vertices"]), int(header["n_triangles"])
    expect_count(arrays, "vertices", 3 * n_vertices)
    expect_count(arrays, "triangles", 3 * n_triangles)
    expect_count(arrays, "vertex_obstacle", n_vertices)
    expect_count(arrays, "trace_re", n_vertices)
    if header["is_complex"]:
        expect_count(arrays, "trace_im", n_vertices)
        values = arrays["trace_re"] + 1j * arrays["trace_im"]
    else:
        if "trace_im" in arrays:
            raise CountMismatchError("real-valued record carries an imaginary trace array")
        values = arrays["trace_re"].astype(np.complex128)

    ellipsoids = [Ellipsoid.from_dict(e) for e in header["ellipsoids"]]
    mesh = TriangleMesh.from_arrays(arrays["vertices"], arrays["triangles"], arrays["vertex_obstacle"], ellipsoids)
    scene = Scene(
        ellipsoids=ellipsoids,
        mesh=mesh,
        environment_half_extent=float(header["environment_half_extent"]),
        target_edge_length=float(header["target_edge_length"]),
    )
    trace = BoundaryTrace(values=values, triangle_values=vertex_to_triangle(mesh, values), mesh=mesh)
    return SampleRecord(
        scene=scene,
        problem=ProblemSpec(**header["problem"]),
        trace=trace,
        gmres_iterations=int(header["gmres_iterations"]),
        gmres=dict(header.get("gmres", {})),
        seed=int(header["seed"]),
        sample_id=int(header["sample_id"]),
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------
def generate_sample(variant: str, n_obstacles: int, target_edge_length: float, seed: int,
                    sample_id: int = 0, threads: int = 1) -> Tuple[SampleRecord, GmresReport]:
    """Sample a scene and boundary condition, then solve for the ground-truth trace."""
    if variant not in DIRICHLET_VARIANTS:
        raise ValueError(f"ground truth can only be generated for {', '.join(DIRICHLET_VARIANTS)}, not {variant!r}")
    scene = sample_scene(n_obstacles, seed, target_edge_length)
    problem = sample_problem(variant, scene, problem_seed(seed))
    rhs = dirichlet_values(problem, scene.mesh.triangle_centroids)

    start = time.perf_counter()
    trace, report = solve_dirichlet(
        scene.mesh, problem.kernel, rhs, rtol=GROUND_TRUTH_RTOL, max_iter=GMRES_MAX_ITER, threads=threads
    )
    elapsed = time.perf_counter() - start
    logging.info(
        f"Sample {sample_id}: {scene.mesh.n_triangles} triangles, {report.iterations} GMRES iterations, "
        f"BEM solve {elapsed:.2f}s"
    )
    if not problem.is_complex:
        trace = BoundaryTrace(values=trace.values.real, triangle_values=trace.triangle_values.real, mesh=scene.mesh)
    record = SampleRecord(
        scene=scene,
        problem=problem,
        trace=trace,
        gmres_iterations=report.iterations,
        gmres=report.to_dict(),
        seed=seed,
        sample_id=sample_id,
    )
    return record, report


def redraw_budget(n_samples: int) -> int:
    return int(np.floor(MAX_REDRAW_FRACTION * n_samples + 1e-9))


def _generate_slot(variant: str, n_obstacles: int, target_edge_length: float, seed: int, index: int,
                   budget: int, threads: int) -> Tuple[SampleRecord, int]:
    redraws = 0
    while True:
        slot_seed = seed + index + REDRAW_SEED_STRIDE * redraws
        try:
            record, _ = generate_sample(variant, n_obstacles, target_edge_length, slot_seed, sample_id=index, threads=threads)
            return record, redraws
        except (SceneSamplingError, ProblemSamplingError, MeshingError, SolverConvergenceError) as e:
            redraws += 1
            logging.warning(f"Sample {index} (seed {slot_seed}) failed: {e}; re-drawing")
            if redraws > budget:
                raise DatasetGenerationError(
                    f"sample {index} needed more than {budget} re-draws; last failure: {type(e).__name__}: {e}"
                )


def trace_statistics(records: List[SampleRecord]) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Per-channel (real, imaginary) mean and std over all vertices of all records."""
    values = np.concatenate([r.trace.values for r in records])
    mean = (float(values.real.mean()), float(values.imag.mean()))
    std = (float(values.real.std()) or 1.0, float(values.imag.std()) or 1.0)
    return mean, std


def generate_dataset(variant: str, n_samples: int, n_obstacles: int, target_edge_length: float, seed: int,
                     out_dir, threads: int = 1) -> DatasetManifest:
    """
    Generate ``n_samples`` ground-truth records into ``out_dir``.

    Raises:
        ValueError: Neumann variant (no ground truth) or bad counts
        DatasetGenerationError: Unwritable directory or too many re-draws
    """
    if variant not in DIRICHLET_VARIANTS:
        raise ValueError(f"ground truth can only be generated for {', '.join(DIRICHLET_VARIANTS)}, not {variant!r}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        check = out_dir / ".write_check"
        check.write_bytes(b"")
        check.unlink()
    except OSError as e:
        raise DatasetGenerationError(f"output directory {out_dir} is not writable: {e}")

    budget = redraw_budget(n_samples)
    print(f">> Generating {n_samples} {variant} samples ({n_obstacles} obstacles, edge {target_edge_length}) into {out_dir}")
    start = time.time()

    # Parallel across samples, single-threaded assembly inside each
    across_samples = threads > 1 and n_samples > 1
    results = ordered_map(
        lambda i: _generate_slot(variant, n_obstacles, target_edge_length, seed, i, budget,
                                 1 if across_samples else threads),
        range(n_samples),
        threads=threads if across_samples else 1,
    )
    total_redraws = sum(r for _, r in results)
    if total_redraws > budget:
        raise DatasetGenerationError(
            f"{total_redraws} re-draws for {n_samples} samples exceeds the {MAX_REDRAW_FRACTION:.0%} budget ({budget})"
        )

    records = [record for record, _ in results]
    files = []
    for record in records:
        name = sample_file_name(record.sample_id)
        write_sample(record, out_dir / name)
        files.append(name)

    mean, std = trace_statistics(records)
    manifest = DatasetManifest(
        variant=variant,
        n_samples=n_samples,
        n_obstacles=n_obstacles,
        target_edge_length=target_edge_length,
        seed=seed,
        files=files,
        redraws=total_redraws,
        trace_mean=mean,
        trace_std=std,
    )
    (out_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n")

    elapsed = time.time() - start
    print(f">> Done: {n_samples} samples, {total_redraws} re-draws, {elapsed / 60:.1f} min")
    return manifest


def load_manifest(data_dir) -> DatasetManifest:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_NAME} in {data_dir}")
    manifest = DatasetManifest.model_validate_json(path.read_text())
    missing = [name for name in manifest.files if not (Path(data_dir) / name).exists()]
    on_disk = sorted(p.name for p in Path(data_dir).glob("sample_*.msc"))
    if missing or len(manifest.files) != manifest.n_samples or len(on_disk) != manifest.n_samples:
        raise ManifestError(
            f"manifest lists {manifest.n_samples} samples but {len(on_disk)} files are present"
            + (f" ({len(missing)} missing)" if missing else "")
        )
    return manifest


def load_dataset(data_dir) -> Tuple[DatasetManifest, List[SampleRecord]]:
    """Read a generated dataset, checking the manifest against the files on disk."""
    manifest = load_manifest(data_dir)
    records = [read_sample(Path(data_dir) / name) for name in manifest.files]
    logging.info(f"Loaded {len(records)} {manifest.variant} samples from {data_dir}")
    return manifest, records


def rotate_sample(record: SampleRecord, rotation: np.ndarray) -> SampleRecord:
    """Rigidly rotate a sample about the origin; the trace (label) is unchanged."""
    rotation = np.asarray(rotation, dtype=np.float64)
    mesh = record.mesh
    vertices = mesh.vertices @ rotation.T
    rotated_mesh = TriangleMesh(
        vertices=vertices,
        triangles=mesh.triangles,
        vertex_normals=mesh.vertex_normals @ rotation.T,
        triangle_areas=mesh.triangle_areas,
        triangle_centroids=mesh.triangle_centroids @ rotation.T,
        vertex_obstacle=mesh.vertex_obstacle,
        triangle_obstacle=mesh.triangle_obstacle,
    )
    ellipsoids = [
        Ellipsoid(center=rotation @ e.center, semi_axes=e.semi_axes, rotation=rotation @ e.rotation)
        for e in record.scene.ellipsoids
    ]
    scene = Scene(
        ellipsoids=ellipsoids,
        mesh=rotated_mesh,
        environment_half_extent=record.scene.environment_half_extent,
        target_edge_length=record.scene.target_edge_length,
    )
    trace = BoundaryTrace(values=record.trace.values, triangle_values=record.trace.triangle_values, mesh=rotated_mesh)
    return SampleRecord(
        scene=scene,
        problem=record.problem.rotated(rotation),
        trace=trace,
        gmres_iterations=record.gmres_iterations,
        gmres=record.gmres,
        seed=record.seed,
        sample_id=record.sample_id,
    )
