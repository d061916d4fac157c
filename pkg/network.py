"""
Multiscale message-passing surrogate.

Encode -> N_b boundary blocks -> (expand + down block) per level -> N_d distant blocks
-> (contract + up block) per level -> N_b boundary blocks, the last one decoding to d_f channels.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from config import ModelConfig
from container import CountMismatchError, read_container, write_container
from features import FeatureTensors
from graphs import MultiscaleGraphSet

CHECKPOINT_MAGIC = b"MSNN01\n"


class MLP(nn.Module):
    """Linear -> SiLU -> Linear -> SiLU -> Linear, hidden width = output width, optional LayerNorm."""

    def __init__(self, in_dim: int, out_dim: int, layer_norm: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.layers = nn.Sequential(
            nn.Linear(in_dim, out_dim),
            nn.SiLU(),
            nn.Linear(out_dim, out_dim),
            nn.SiLU(),
            nn.Linear(out_dim, out_dim),
        )
        self.norm = nn.LayerNorm(out_dim) if layer_norm else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"MLP expects {self.in_dim} input features, got {x.shape[-1]}")
        y = self.layers(x)
        return self.norm(y) if self.norm is not None else y


class ProcessorBlock(nn.Module):
    """
    One edge update followed by one node update.

    Edges carry (edge, source node, destination node) into the edge MLP; each destination node
    sums the updated features of its incoming edges. Source and destination node sets may
    differ (transition graphs between levels).
    """

    def __init__(self, src_dim: int, dst_dim: int, edge_dim: int, out_dim: Optional[int] = None,
                 layer_norm: bool = True, decoder: bool = False):
        super().__init__()
        out_dim = dst_dim if out_dim is None else out_dim
        self.edge_mlp = MLP(edge_dim + src_dim + dst_dim, edge_dim, layer_norm)
        self.node_mlp = MLP(dst_dim + edge_dim, out_dim, layer_norm and not decoder)
        self.residual = out_dim == dst_dim and not decoder

    def forward(self, src: torch.Tensor, dst: torch.Tensor, edge_features: torch.Tensor,
                edge_index: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        sources, targets = edge_index[0], edge_index[1]
        edges = self.edge_mlp(torch.cat([edge_features, src[sources], dst[targets]], dim=-1)) + edge_features
        # index_add_ accumulates in edge order on CPU
        aggregate = dst.new_zeros((dst.shape[0], edges.shape[1])).index_add(0, targets, edges)
        nodes = self.node_mlp(torch.cat([dst, aggregate], dim=-1))
        if self.residual:
            nodes = nodes + dst
        return nodes, edges


@dataclass
class SampleTensors:
    """Torch view of one sample's graph hierarchy and features."""

    node: torch.Tensor
    boundary_index: torch.Tensor
    boundary_attr: torch.Tensor
    parents: List[torch.Tensor] = field(default_factory=list)
    down_index: List[torch.Tensor] = field(default_factory=list)
    down_attr: List[torch.Tensor] = field(default_factory=list)
    up_index: List[torch.Tensor] = field(default_factory=list)
    up_attr: List[torch.Tensor] = field(default_factory=list)
    distant_index: Optional[torch.Tensor] = None
    distant_attr: Optional[torch.Tensor] = None

    @property
    def n_nodes(self) -> int:
        return self.node.shape[0]

    @classmethod
    def from_arrays(cls, graphs: MultiscaleGraphSet, features: FeatureTensors,
                    dtype: torch.dtype = torch.float32) -> "SampleTensors":
        def value(a: np.ndarray) -> torch.Tensor:
            return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)

        def index(edges: np.ndarray) -> torch.Tensor:
            return torch.as_tensor(np.ascontiguousarray(np.asarray(edges, dtype=np.int64).T))

        if graphs.boundary.n_nodes != features.node.shape[0]:
            raise ValueError("graph set and features come from different samples")
        return cls(
            node=value(features.node),
            boundary_index=index(graphs.boundary.edges),
            boundary_attr=value(features.boundary_edges),
            parents=[torch.as_tensor(np.asarray(p, dtype=np.int64)) for p in graphs.level_parents],
            down_index=[index(g.edges) for g in graphs.down],
            down_attr=[value(a) for a in features.down_edges],
            up_index=[index(g.edges) for g in graphs.up],
            up_attr=[value(a) for a in features.up_edges],
            distant_index=index(graphs.distant.edges) if graphs.distant is not None else None,
            distant_attr=value(features.distant_edges) if features.distant_edges is not None else None,
        )


class MultiscaleGNN(nn.Module):
    def __init__(self, node_dim: int, edge_dim: int, out_dim: int, levels: int, config: ModelConfig):
        super().__init__()
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.hparams = {
            "node_dim": int(node_dim),
            "edge_dim": int(edge_dim),
            "out_dim": int(out_dim),
            "levels": int(levels),
            "config": config.model_dump(),
        }
        self.levels = levels
        self.dims = [config.latent_dim * config.expansion ** j for j in range(levels)]
        ln = config.layer_norm
        d0 = self.dims[0]

        self.node_encoder = MLP(node_dim, d0, ln)
        self.boundary_encoder = MLP(edge_dim, d0, ln)
        self.leading = nn.ModuleList([ProcessorBlock(d0, d0, d0, layer_norm=ln) for _ in range(config.n_boundary_blocks)])

        coarse = range(1, levels)
        self.expanders = nn.ModuleList([MLP(self.dims[j - 1], self.dims[j], ln) for j in coarse])
        self.down_encoders = nn.ModuleList([MLP(edge_dim, self.dims[j], ln) for j in coarse])
        self.down_blocks = nn.ModuleList([ProcessorBlock(self.dims[j], self.dims[j], self.dims[j], layer_norm=ln) for j in coarse])

        self.n_distant_blocks = config.n_distant_blocks
        if config.n_distant_blocks > 0:
            top = self.dims[-1]
            self.distant_encoder = MLP(edge_dim, top, ln)
            self.distant_blocks = nn.ModuleList([ProcessorBlock(top, top, top, layer_norm=ln) for _ in range(config.n_distant_blocks)])

        self.contractions = nn.ModuleList([MLP(self.dims[j], self.dims[j - 1], ln) for j in coarse])
        self.up_encoders = nn.ModuleList([MLP(edge_dim, self.dims[j - 1], ln) for j in coarse])
        self.up_blocks = nn.ModuleList([
            ProcessorBlock(self.dims[j], self.dims[j - 1], self.dims[j - 1], layer_norm=ln) for j in coarse
        ])

        trailing = [ProcessorBlock(d0, d0, d0, layer_norm=ln) for _ in range(config.n_boundary_blocks - 1)]
        trailing.append(ProcessorBlock(d0, d0, d0, out_dim=out_dim, layer_norm=ln, decoder=True))
        self.trailing = nn.ModuleList(trailing)

    def forward(self, sample: SampleTensors) -> torch.Tensor:
        if len(sample.parents) != self.levels - 1:
            raise ValueError(f"model has {self.levels} levels, sample graphs have {len(sample.parents) + 1}")

        h = self.node_encoder(sample.node)
        e0 = self.boundary_encoder(sample.boundary_attr)
        for block in self.leading:
            h, e0 = block(h, h, e0, sample.boundary_index)

        down_path = [h]
        for j in range(1, self.levels):
            expanded = self.expanders[j - 1](down_path[-1])
            coarse = expanded[sample.parents[j - 1]]
            edges = self.down_encoders[j - 1](sample.down_attr[j - 1])
            coarse, _ = self.down_blocks[j - 1](expanded, coarse, edges, sample.down_index[j - 1])
            down_path.append(coarse)

        h = down_path[-1]
        if self.n_distant_blocks > 0:
            if sample.distant_index is None:
                raise ValueError("model has distant blocks but the sample has no distant graph")
            edges = self.distant_encoder(sample.distant_attr)
            for block in self.distant_blocks:
                h, edges = block(h, h, edges, sample.distant_index)

        for j in range(self.levels - 1, 0, -1):
            # Shared nodes start from the contracted coarse state, the rest from the down path
            fine = down_path[j - 1].index_copy(0, sample.parents[j - 1], self.contractions[j - 1](h))
            edges = self.up_encoders[j - 1](sample.up_attr[j - 1])
            h, _ = self.up_blocks[j - 1](h, fine, edges, sample.up_index[j - 1])

        for block in self.trailing:
            h, e0 = block(h, h, e0, sample.boundary_index)
        return h


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path, model: MultiscaleGNN, metadata: Optional[dict] = None) -> int:
    """Parameters as float64 arrays in state-dict order; architecture and metadata in the header."""
    state = model.state_dict()
    header = {
        "model": model.hparams,
        "parameters": [[name, list(tensor.shape)] for name, tensor in state.items()],
        "metadata": metadata or {},
    }
    arrays = [(name, "f8", tensor.detach().cpu().double().numpy()) for name, tensor in state.items()]
    size = write_container(path, CHECKPOINT_MAGIC, header, arrays)
    logging.info(f"Saved checkpoint with {count_parameters(model)} parameters to {path}")
    return size


def load_checkpoint(path, dtype: torch.dtype = torch.float32) -> Tuple[MultiscaleGNN, dict]:
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    hparams = header["model"]
    model = MultiscaleGNN(
        node_dim=hparams["node_dim"],
        edge_dim=hparams["edge_dim"],
        out_dim=hparams["out_dim"],
        levels=hparams["levels"],
        config=ModelConfig(**hparams["config"]),
    ).to(dtype)
    expected = model.state_dict()
    state = {}
    for name, shape in header["parameters"]:
        if name not in expected or list(expected[name].shape) != list(shape):
            raise CountMismatchError(f"checkpoint parameter {name!r} {shape} does not fit the architecture")
        state[name] = torch.from_numpy(arrays[name].reshape(shape)).to(dtype)
    missing = set(expected) - set(state)
    if missing:
        raise CountMismatchError(f"checkpoint lacks parameters: {', '.join(sorted(missing))}")
    model.load_state_dict(state)
    model.eval()
    return model, header.get("metadata", {})
