"""
Ellipsoid obstacles, icosphere meshing and random scene sampling.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np

from utils import row_blocks, unit_vectors

# Scene defaults for the 10 x 10 x 10 environment
ENVIRONMENT_HALF_EXTENT = 5.0
SEMI_AXIS_RANGE = (0.3, 1.5)
OBSTACLE_MARGIN = 0.05
MAX_SUBDIVISION_DEPTH = 6
MAX_CONSECUTIVE_REJECTIONS = 10_000


class MeshingError(ValueError):
    pass


class SceneSamplingError(RuntimeError):
    pass


@dataclass
class Ellipsoid:
    center: np.ndarray
    semi_axes: np.ndarray
    # Columns are the principal axes in world coordinates
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.semi_axes = np.asarray(self.semi_axes, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.any(self.semi_axes <= 0.0):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes.tolist()}")

    @property
    def bounding_radius(self) -> float:
        return float(self.semi_axes.max())

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return local @ self.rotation.T + self.center

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict interior test."""
        scaled = self.to_local(points) / self.semi_axes
        return np.einsum("ij,ij->i", scaled, scaled) < 1.0

    def normals_at(self, points: np.ndarray) -> np.ndarray:
        """Outward unit normals of the level set through ``points`` (exact on the surface)."""
        gradient_local = self.to_local(points) / self.semi_axes ** 2
        return unit_vectors(gradient_local @ self.rotation.T)

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "semi_axes": self.semi_axes.tolist(),
            "rotation": self.rotation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Ellipsoid":
        return cls(center=data["center"], semi_axes=data["semi_axes"], rotation=data.get("rotation", np.eye(3)))


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray
    triangle_areas: np.ndarray
    triangle_centroids: np.ndarray
    vertex_obstacle: np.ndarray
    triangle_obstacle: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_obstacles(self) -> int:
        return int(self.vertex_obstacle.max()) + 1 if len(self.vertex_obstacle) else 0

    def triangle_corners(self) -> np.ndarray:
        """(M, 3, 3) array of corner coordinates."""
        return self.vertices[self.triangles]

    def triangle_normals(self) -> np.ndarray:
        corners = self.triangle_corners()
        return unit_vectors(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]))

    def triangle_diameters(self) -> np.ndarray:
        corners = self.triangle_corners()
        edges = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 1], corners[:, 0] - corners[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    def undirected_edges(self) -> np.ndarray:
        """Unique (i, j) vertex pairs with i < j, sorted lexicographically."""
        return np.unique(_all_triangle_edges(self.triangles), axis=0)

    def is_watertight(self) -> bool:
        if self.n_triangles == 0:
            return False
        _, counts = np.unique(_all_triangle_edges(self.triangles), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def vertex_incidence(self):
        """Sparse (N, M) matrix with area weights: entry (v, t) = area_t when v is a corner of t."""
        from scipy.sparse import csr_matrix

        rows = self.triangles.reshape(-1)
        cols = np.repeat(np.arange(self.n_triangles), 3)
        data = np.repeat(self.triangle_areas, 3)
        return csr_matrix((data, (rows, cols)), shape=(self.n_vertices, self.n_triangles))

    @classmethod
    def from_arrays(cls, vertices, triangles, vertex_obstacle, ellipsoids: Sequence[Ellipsoid]) -> "TriangleMesh":
        """Rebuild derived quantities (normals from the analytic ellipsoids, areas, centroids)."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        vertex_obstacle = np.asarray(vertex_obstacle, dtype=np.int64).reshape(-1)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle references a vertex index out of range")
        normals = np.zeros_like(vertices)
        for obstacle_id, ellipsoid in enumerate(ellipsoids):
            members = vertex_obstacle == obstacle_id
            normals[members] = ellipsoid.normals_at(vertices[members])
        return cls.with_normals(vertices, triangles, vertex_obstacle, normals)

    @classmethod
    def with_normals(cls, vertices, triangles, vertex_obstacle, normals) -> "TriangleMesh":
        corners = vertices[triangles]
        cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.any(areas <= 0.0):
            raise MeshingError("mesh contains degenerate triangles")
        return cls(
            vertices=vertices,
            triangles=triangles,
            vertex_normals=normals,
            triangle_areas=areas,
            triangle_centroids=corners.mean(axis=1),
            vertex_obstacle=vertex_obstacle,
            triangle_obstacle=vertex_obstacle[triangles[:, 0]] if len(triangles) else np.zeros(0, dtype=np.int64),
        )


@dataclass
class Scene:
    ellipsoids: List[Ellipsoid]
    mesh: TriangleMesh
    environment_half_extent: float = ENVIRONMENT_HALF_EXTENT
    target_edge_length: float = 0.1

    @property
    def n_obstacles(self) -> int:
        return len(self.ellipsoids)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True where a point lies strictly inside any ellipsoid."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.zeros(len(points), dtype=bool)
        for ellipsoid in self.ellipsoids:
            inside |= ellipsoid.contains(points)
        return inside


def _all_triangle_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=0)
    return np.sort(edges, axis=1)


# ---------------------------------------------------------------------------
# Icosphere
# ---------------------------------------------------------------------------
_GOLDEN = (1.0 + 5.0 ** 0.5) / 2.0
_ICOSAHEDRON_VERTICES = np.array([
    [-1, _GOLDEN, 0], [1, _GOLDEN, 0], [-1, -_GOLDEN, 0], [1, -_GOLDEN, 0],
    [0, -1, _GOLDEN], [0, 1, _GOLDEN], [0, -1, -_GOLDEN], [0, 1, -_GOLDEN],
    [_GOLDEN, 0, -1], [_GOLDEN, 0, 1], [-_GOLDEN, 0, -1], [-_GOLDEN, 0, 1],
], dtype=np.float64)
_ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


@lru_cache(maxsize=None)
def unit_icosphere(depth: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Icosphere on the unit sphere after ``depth`` midpoint subdivisions.

    Returns:
        tuple: (vertices (N, 3), triangles (M, 3)) with counter-clockwise faces seen from outside
    """
    if depth < 0:
        raise ValueError(f"subdivision depth must be >= 0, got {depth}")
    vertices = list(unit_vectors(_ICOSAHEDRON_VERTICES))
    faces = _ICOSAHEDRON_FACES.copy()
    for _ in range(depth):
        midpoint_index = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint_index:
                mid = vertices[a] + vertices[b]
                vertices.append(mid / np.linalg.norm(mid))
                midpoint_index[key] = len(vertices) - 1
            return midpoint_index[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = np.array(refined, dtype=np.int64)

    vertices = np.array(vertices)
    # Orient every face outward
    corners = vertices[faces]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    flip = np.einsum("ij,ij->i", cross, corners.mean(axis=1)) < 0.0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    vertices.setflags(write=False)
    faces.setflags(write=False)
    return vertices, faces


def mesh_ellipsoid(ellipsoid: Ellipsoid, target_edge_length: float, max_depth: int = MAX_SUBDIVISION_DEPTH,
                   depth: int = None, obstacle_id: int = 0) -> TriangleMesh:
    """
    Mesh an ellipsoid by scaling an icosphere.

    Args:
        ellipsoid: Obstacle to mesh
        target_edge_length: Upper bound on the mean edge length of the result
        max_depth: Subdivision cap; exceeding it raises ``MeshingError``
        depth: Force a subdivision depth instead of searching for one
        obstacle_id: Id stamped on every vertex and triangle

    Returns:
        TriangleMesh: Closed mesh with analytic outward normals
    """
    if target_edge_length <= 0:
        raise ValueError(f"target_edge_length must be > 0, got {target_edge_length}")

    depths = [depth] if depth is not None else range(max_depth + 1)
    for current in depths:
        unit_vertices, faces = unit_icosphere(current)
        world = ellipsoid.to_world(unit_vertices * ellipsoid.semi_axes)
        edges = np.unique(_all_triangle_edges(faces), axis=0)
        mean_edge = float(np.linalg.norm(world[edges[:, 0]] - world[edges[:, 1]], axis=1).mean())
        if depth is not None or mean_edge <= target_edge_length:
            logging.debug(f"Meshed ellipsoid at depth {current}: {len(world)} vertices, mean edge {mean_edge:.4f}")
            return TriangleMesh.with_normals(
                world, np.array(faces), np.full(len(world), obstacle_id, dtype=np.int64), ellipsoid.normals_at(world)
            )
    raise MeshingError(
        f"target edge length {target_edge_length} needs more than {max_depth} subdivisions "
        f"for semi-axes {ellipsoid.semi_axes.tolist()}"
    )


def merge_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    """Union of per-obstacle meshes with re-based vertex indices."""
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    return TriangleMesh(
        vertices=np.concatenate([m.vertices for m in meshes]),
        triangles=np.concatenate([m.triangles + off for m, off in zip(meshes, offsets)]),
        vertex_normals=np.concatenate([m.vertex_normals for m in meshes]),
        triangle_areas=np.concatenate([m.triangle_areas for m in meshes]),
        triangle_centroids=np.concatenate([m.triangle_centroids for m in meshes]),
        vertex_obstacle=np.concatenate([m.vertex_obstacle for m in meshes]),
        triangle_obstacle=np.concatenate([m.triangle_obstacle for m in meshes]),
    )


def build_scene(ellipsoids: Sequence[Ellipsoid], target_edge_length: float,
                environment_half_extent: float = ENVIRONMENT_HALF_EXTENT,
                max_depth: int = MAX_SUBDIVISION_DEPTH) -> Scene:
    """Mesh every ellipsoid and wrap them in a Scene."""
    meshes = [mesh_ellipsoid(e, target_edge_length, max_depth=max_depth, obstacle_id=i) for i, e in enumerate(ellipsoids)]
    return Scene(
        ellipsoids=list(ellipsoids),
        mesh=merge_meshes(meshes),
        environment_half_extent=environment_half_extent,
        target_edge_length=target_edge_length,
    )


def sample_scene(n_obstacles: int, rng_seed: int, target_edge_length: float,
                 environment_half_extent: float = ENVIRONMENT_HALF_EXTENT,
                 semi_axis_range: Tuple[float, float] = SEMI_AXIS_RANGE,
                 margin: float = OBSTACLE_MARGIN,
                 max_rejections: int = MAX_CONSECUTIVE_REJECTIONS,
                 max_depth: int = MAX_SUBDIVISION_DEPTH) -> Scene:
    """
    Draw non-overlapping random ellipsoids by rejection sampling.

    An obstacle is accepted when its bounding sphere (radius = largest semi-axis) stays at
    least ``margin`` away from every accepted bounding sphere.
    """
    if n_obstacles < 1:
        raise ValueError(f"n_obstacles must be >= 1, got {n_obstacles}")
    rng = np.random.default_rng(rng_seed)
    accepted: List[Ellipsoid] = []
    rejections = 0
    while len(accepted) < n_obstacles:
        semi_axes = rng.uniform(semi_axis_range[0], semi_axis_range[1], size=3)
        reach = environment_half_extent - semi_axes.max()
        center = rng.uniform(-reach, reach, size=3)
        candidate = Ellipsoid(center=center, semi_axes=semi_axes)
        clear = all(
            np.linalg.norm(candidate.center - other.center) > candidate.bounding_radius + other.bounding_radius + margin
            for other in accepted
        )
        if clear:
            accepted.append(candidate)
            rejections = 0
            continue
        rejections += 1
        if rejections >= max_rejections:
            raise SceneSamplingError(
                f"seed {rng_seed}: {rejections} consecutive rejections while placing obstacle {len(accepted) + 1}/{n_obstacles}"
            )
    return build_scene(accepted, target_edge_length, environment_half_extent, max_depth=max_depth)


def winding_number(mesh: TriangleMesh, points: np.ndarray, block_size: int = 2_000_000) -> np.ndarray:
    """
    Generalized winding number of closed mesh(es) around each point (1 inside, 0 outside).

    Uses the signed solid angle of every triangle seen from the point.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    corners = mesh.triangle_corners()
    result = np.zeros(len(points))
    rows = max(1, block_size // max(1, mesh.n_triangles))
    for block in row_blocks(len(points), rows):
        rel = corners[None, :, :, :] - points[block, None, None, :]
        a, b, c = rel[:, :, 0], rel[:, :, 1], rel[:, :, 2]
        la, lb, lc = (np.linalg.norm(v, axis=-1) for v in (a, b, c))
        numerator = np.einsum("ptk,ptk->pt", a, np.cross(b, c))
        denominator = (la * lb * lc + np.einsum("ptk,ptk->pt", a, b) * lc
                       + np.einsum("ptk,ptk->pt", a, c) * lb + np.einsum("ptk,ptk->pt", b, c) * la)
        result[block] = (2.0 * np.arctan2(numerator, denominator)).sum(axis=1) / (4.0 * np.pi)
    return result


def points_inside_mesh(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    return winding_number(mesh, points) > 0.5
