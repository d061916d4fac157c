"""
Multiscale graph hierarchy over the boundary mesh.

Level 0 is the bidirected mesh-edge graph. Coarser levels keep one representative node per
octree cell (two octree depths per level), linked to the finer level by down/up transition
graphs. The coarsest level carries the distant-nodes graph, whose edges are chosen by keeping
the shortest of ``n_c`` random candidate targets.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from geometry import ENVIRONMENT_HALF_EXTENT, TriangleMesh

# Each multiscale level spans two octree depths
CELL_SCALE_STEP = 4.0


@dataclass
class DirectedGraph:
    node_positions: np.ndarray
    node_origin_index: np.ndarray
    edges: np.ndarray  # (E, 2) rows of (src, dst)

    def __post_init__(self):
        self.node_positions = np.asarray(self.node_positions, dtype=np.float64).reshape(-1, 3)
        self.node_origin_index = np.asarray(self.node_origin_index, dtype=np.int64).reshape(-1)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = len(self.node_positions)
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError(f"edge index out of range for {n} nodes")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                raise ValueError("graph contains self-loops")
            if len(np.unique(self.edges, axis=0)) != len(self.edges):
                raise ValueError("graph contains duplicate edges")

    @property
    def n_nodes(self) -> int:
        return len(self.node_positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.edges[:, 1], minlength=self.n_nodes)

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.n_nodes)

    def n_components(self) -> int:
        adjacency = coo_matrix(
            (np.ones(self.n_edges), (self.edges[:, 0], self.edges[:, 1])), shape=(self.n_nodes, self.n_nodes)
        )
        count, _ = connected_components(adjacency, directed=True, connection="weak")
        return int(count)

    def edge_vectors(self) -> np.ndarray:
        return self.node_positions[self.edges[:, 1]] - self.node_positions[self.edges[:, 0]]


@dataclass
class TransitionGraph:
    """Bipartite graph between consecutive levels; edges index (source level, target level)."""

    src_positions: np.ndarray
    dst_positions: np.ndarray
    edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_vectors(self) -> np.ndarray:
        return self.dst_positions[self.edges[:, 1]] - self.src_positions[self.edges[:, 0]]

    def transpose(self) -> "TransitionGraph":
        return TransitionGraph(self.dst_positions, self.src_positions, self.edges[:, ::-1].copy())


@dataclass
class MultiscaleGraphSet:
    levels: int
    boundary: DirectedGraph
    # level_parents[j - 1] maps the nodes of V^j to their index in V^(j-1)
    level_parents: List[np.ndarray] = field(default_factory=list)
    level_positions: List[np.ndarray] = field(default_factory=list)
    down: List[TransitionGraph] = field(default_factory=list)
    up: List[TransitionGraph] = field(default_factory=list)
    distant: Optional[DirectedGraph] = None

    def level_sizes(self) -> List[int]:
        return [len(p) for p in self.level_positions]


def build_boundary_graph(mesh: TriangleMesh) -> DirectedGraph:
    """Mesh vertices with both directions of every undirected mesh edge."""
    undirected = mesh.undirected_edges()
    edges = np.concatenate([undirected, undirected[:, ::-1]], axis=0)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return DirectedGraph(
        node_positions=mesh.vertices,
        node_origin_index=np.arange(mesh.n_vertices),
        edges=edges[order],
    )


def _cell_representatives(positions: np.ndarray, cell_side: float, half_extent: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Group points by octree cell and pick the point nearest each cell center.

    Returns:
        tuple: (representative point indices in cell order, cell id of every point)
    """
    cells = np.floor((positions + half_extent) / cell_side).astype(np.int64)
    _, cell_of_point = np.unique(cells, axis=0, return_inverse=True)
    cell_of_point = cell_of_point.reshape(-1)
    centers = (cells + 0.5) * cell_side - half_extent
    distance = np.linalg.norm(positions - centers, axis=1)
    index = np.arange(len(positions))
    # Sort by cell, then distance, then index; the first entry of each cell wins
    order = np.lexsort((index, distance, cell_of_point))
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell_of_point[order][1:] != cell_of_point[order][:-1]
    representatives = order[first]
    return representatives, cell_of_point


def octree_coarsen(positions: np.ndarray, levels: int, base_cell: float,
                   cell_scale_step: float = CELL_SCALE_STEP,
                   half_extent: float = ENVIRONMENT_HALF_EXTENT):
    """
    Octree coarsening of ``positions`` into ``levels`` levels.

    Level j >= 1 uses cells of side ``base_cell * cell_scale_step**j``; its nodes are the
    level-(j-1) nodes nearest to the centers of the occupied cells.

    Returns:
        tuple: (parents, down_edges, up_edges) where ``parents[j-1]`` indexes V^j into V^(j-1),
        ``down_edges[j-1]`` holds (fine, coarse) pairs and ``up_edges[j-1]`` their reverses
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if len(positions) == 0:
        raise ValueError("cannot coarsen an empty node set")
    if base_cell <= 0:
        raise ValueError(f"base_cell must be > 0, got {base_cell}")

    parents, down_edges, up_edges = [], [], []
    current = positions
    for j in range(1, levels):
        side = base_cell * cell_scale_step ** j
        representatives, cell_of_point = _cell_representatives(current, side, half_extent)
        down = np.stack([np.arange(len(current)), cell_of_point], axis=1)
        parents.append(representatives)
        down_edges.append(down)
        up_edges.append(down[:, ::-1].copy())
        logging.debug(f"Octree level {j}: cell side {side:.3f}, {len(current)} -> {len(representatives)} nodes")
        current = current[representatives]
    return parents, down_edges, up_edges


def required_edges(n_nodes: int, alpha: float) -> int:
    """Edges each node requests: round(alpha * (n - 1)) clamped to [1, n - 1]."""
    return int(min(max(round(alpha * (n_nodes - 1)), 1), n_nodes - 1))


def propose_distant_edges(positions: np.ndarray, alpha: float, n_candidates: int, rng_seed: int) -> np.ndarray:
    """
    Per-node edge selection before symmetrization.

    For every node u and each of its required edges, ``n_candidates`` distinct targets are drawn
    uniformly from the nodes u is not linked to yet; the nearest one (lowest index on ties) is kept.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if n_candidates < 1:
        raise ValueError(f"n_candidates must be >= 1, got {n_candidates}")
    if n < 2:
        raise ValueError(f"distant graph needs at least 2 nodes, got {n}")

    rng = np.random.default_rng(rng_seed)
    per_node = required_edges(n, alpha)
    edges = np.empty((n * per_node, 2), dtype=np.int64)
    row = 0
    for u in range(n):
        linked = np.zeros(n, dtype=bool)
        linked[u] = True
        for _ in range(per_node):
            available = np.flatnonzero(~linked)
            if len(available) <= n_candidates:
                candidates = available
            else:
                candidates = rng.choice(available, size=n_candidates, replace=False)
            distance = np.linalg.norm(positions[candidates] - positions[u], axis=1)
            best = candidates[np.lexsort((candidates, distance))[0]]
            linked[best] = True
            edges[row] = (u, best)
            row += 1
    return edges


def symmetrize_edges(edges: np.ndarray) -> np.ndarray:
    """Add reverses, drop duplicates, sort by (src, dst)."""
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    return np.unique(both, axis=0)


def select_distant_edges(positions: np.ndarray, alpha: float, n_candidates: int, rng_seed: int) -> np.ndarray:
    return symmetrize_edges(propose_distant_edges(positions, alpha, n_candidates, rng_seed))


def build_multiscale_graphs(mesh: TriangleMesh, levels: int = 3, base_cell: Optional[float] = None,
                            target_edge_length: float = 0.1, alpha: float = 0.1, n_candidates: int = 2,
                            rng_seed: int = 0, half_extent: float = ENVIRONMENT_HALF_EXTENT,
                            with_distant: bool = True) -> MultiscaleGraphSet:
    """
    Build the boundary graph, the coarse levels, the transition graphs and the distant graph.

    Args:
        base_cell: Octree base cell side; defaults to ``2 * target_edge_length``
        with_distant: Skip the distant graph (no distant blocks in the model)
    """
    boundary = build_boundary_graph(mesh)
    if base_cell is None:
        base_cell = 2.0 * target_edge_length
    parents, down_edges, up_edges = octree_coarsen(mesh.vertices, levels, base_cell, half_extent=half_extent)

    level_positions = [mesh.vertices]
    for representatives in parents:
        level_positions.append(level_positions[-1][representatives])
    down = [
        TransitionGraph(level_positions[j - 1], level_positions[j], down_edges[j - 1]) for j in range(1, levels)
    ]
    up = [graph.transpose() for graph in down]

    distant = None
    coarsest = level_positions[-1]
    if with_distant:
        origin = parents[-1] if parents else np.arange(len(coarsest))
        # A single coarse node has no partner to link to
        edges = select_distant_edges(coarsest, alpha, n_candidates, rng_seed) if len(coarsest) >= 2 else np.zeros((0, 2))
        distant = DirectedGraph(node_positions=coarsest, node_origin_index=origin, edges=edges)

    return MultiscaleGraphSet(
        levels=levels,
        boundary=boundary,
        level_parents=parents,
        level_positions=level_positions,
        down=down,
        up=up,
        distant=distant,
    )


def dump_graphs_csv(graphs: MultiscaleGraphSet, out_dir) -> List[Path]:
    """Write every graph as ``<name>_nodes.csv`` (node_id, x, y, z) and ``<name>_edges.csv`` (src, dst)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def nodes(name: str, positions: np.ndarray):
        frame = pd.DataFrame(positions, columns=["x", "y", "z"])
        frame.insert(0, "node_id", np.arange(len(positions)))
        path = out_dir / f"{name}_nodes.csv"
        frame.to_csv(path, index=False)
        written.append(path)

    def edges(name: str, pairs: np.ndarray):
        path = out_dir / f"{name}_edges.csv"
        pd.DataFrame(pairs, columns=["src", "dst"]).to_csv(path, index=False)
        written.append(path)

    for j, positions in enumerate(graphs.level_positions):
        nodes(f"level{j}", positions)
    edges("boundary", graphs.boundary.edges)
    for j, (down, up) in enumerate(zip(graphs.down, graphs.up), start=1):
        edges(f"down{j - 1}_{j}", down.edges)
        edges(f"up{j}_{j - 1}", up.edges)
    if graphs.distant is not None:
        edges("distant", graphs.distant.edges)
    logging.info(f"Wrote {len(written)} graph CSV files to {out_dir}")
    return written
