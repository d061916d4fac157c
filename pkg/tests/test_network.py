import sys
import os
from dataclasses import replace

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import FeatureConfig, ModelConfig
from features import build_features
from geometry import Ellipsoid, build_scene
from graphs import build_multiscale_graphs
from network import MLP, MultiscaleGNN, ProcessorBlock, SampleTensors, load_checkpoint, save_checkpoint
from problems import ProblemSpec

SMALL = ModelConfig(latent_dim=4, expansion=2, n_boundary_blocks=2, n_distant_blocks=1)


def _sample(levels=2, with_distant=True):
    # Two icosahedra: 24 boundary nodes
    scene = build_scene([
        Ellipsoid(center=[-1.5, 0.0, 0.0], semi_axes=[1.0, 1.0, 1.0]),
        Ellipsoid(center=[1.5, 0.0, 0.0], semi_axes=[1.0, 1.0, 1.0]),
    ], target_edge_length=10.0)
    graphs = build_multiscale_graphs(scene.mesh, levels=levels, base_cell=0.5, target_edge_length=1.0,
                                     rng_seed=0, with_distant=with_distant)
    problem = ProblemSpec(variant="helmholtz_dirichlet", x0=(0.0, 4.0, 0.0), k=2.0)
    features = build_features(problem, graphs, FeatureConfig())
    return SampleTensors.from_arrays(graphs, features, dtype=torch.float64)


def _model(sample, config=SMALL, levels=2, out_dim=2):
    torch.manual_seed(0)
    return MultiscaleGNN(sample.node.shape[1], sample.boundary_attr.shape[1], out_dim, levels, config).double()


def test_mlp_shapes_and_norm():
    torch.manual_seed(0)
    mlp = MLP(5, 8).double()
    out = mlp(torch.randn(7, 5, dtype=torch.float64))
    assert out.shape == (7, 8)
    torch.testing.assert_close(out.mean(dim=1), torch.zeros(7, dtype=torch.float64), atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        mlp(torch.randn(7, 4, dtype=torch.float64))


def test_mlp_identity_path():
    mlp = MLP(3, 3, layer_norm=False).double()
    # SiLU(z) ~ z for z near 30
    with torch.no_grad():
        for layer, bias in zip(mlp.layers[::2], (30.0, 0.0, -30.0)):
            layer.weight.copy_(torch.eye(3, dtype=torch.float64))
            layer.bias.fill_(bias)
    x = torch.tensor([[0.5, -1.0, 0.25]], dtype=torch.float64)
    torch.testing.assert_close(mlp(x), x, atol=1e-9, rtol=0)


def _finite_difference_check(module, loss_fn, indices=None, h=1e-6, rtol=1e-5):
    params = torch.nn.utils.parameters_to_vector(module.parameters()).detach()
    module.zero_grad()
    loss_fn().backward()
    analytic = torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in module.parameters()])
    indices = range(params.numel()) if indices is None else indices
    numeric, expected = [], []
    with torch.no_grad():
        for i in indices:
            shifted = params.clone()
            shifted[i] += h
            torch.nn.utils.vector_to_parameters(shifted, module.parameters())
            plus = loss_fn().item()
            shifted[i] -= 2 * h
            torch.nn.utils.vector_to_parameters(shifted, module.parameters())
            minus = loss_fn().item()
            numeric.append((plus - minus) / (2 * h))
            expected.append(analytic[i].item())
        torch.nn.utils.vector_to_parameters(params, module.parameters())
    np.testing.assert_allclose(numeric, expected, rtol=rtol, atol=1e-8)


def test_mlp_parameter_gradients():
    torch.manual_seed(3)
    mlp = MLP(4, 3).double()
    x = torch.randn(5, 4, dtype=torch.float64)
    target = torch.randn(5, 3, dtype=torch.float64)
    _finite_difference_check(mlp, lambda: ((mlp(x) - target) ** 2).mean())


def test_model_parameter_gradients():
    sample = _sample()
    model = _model(sample, config=ModelConfig(latent_dim=8, n_boundary_blocks=1, n_distant_blocks=1))
    target = torch.randn(sample.n_nodes, 2, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    n_params = sum(p.numel() for p in model.parameters())
    chosen = np.random.default_rng(0).choice(n_params, size=20, replace=False)
    _finite_difference_check(model, lambda: torch.nn.functional.huber_loss(model(sample), target), chosen, rtol=1e-4)


def test_processor_block_aggregation():
    torch.manual_seed(1)
    block = ProcessorBlock(3, 4, 5).double()
    src = torch.randn(3, 3, dtype=torch.float64)
    dst = torch.randn(3, 4, dtype=torch.float64)
    edge = torch.randn(2, 5, dtype=torch.float64)
    index = torch.tensor([[0, 2], [1, 1]])
    nodes, edges = block(src, dst, edge, index)

    with torch.no_grad():
        expected_edges = block.edge_mlp(torch.cat([edge, src[[0, 2]], dst[[1, 1]]], dim=1)) + edge
        torch.testing.assert_close(edges, expected_edges)
        incoming = expected_edges.sum(dim=0)
        torch.testing.assert_close(nodes[1], block.node_mlp(torch.cat([dst[1], incoming])[None])[0] + dst[1])
        # nodes 0 and 2 receive nothing
        for i in (0, 2):
            isolated = block.node_mlp(torch.cat([dst[i], torch.zeros(5, dtype=torch.float64)])[None])[0] + dst[i]
            torch.testing.assert_close(nodes[i], isolated)


def test_processor_block_gradients():
    torch.manual_seed(2)
    block = ProcessorBlock(3, 4, 5).double()
    index = torch.tensor([[0, 1, 2, 2], [1, 2, 0, 1]])
    inputs = (
        torch.randn(3, 3, dtype=torch.float64, requires_grad=True),
        torch.randn(3, 4, dtype=torch.float64, requires_grad=True),
        torch.randn(4, 5, dtype=torch.float64, requires_grad=True),
    )
    assert torch.autograd.gradcheck(lambda s, d, e: block(s, d, e, index)[0], inputs, eps=1e-6, atol=1e-5)


def test_model_gradients():
    sample = _sample()
    model = _model(sample)
    node = sample.node.clone().requires_grad_(True)
    assert torch.autograd.gradcheck(lambda x: model(replace(sample, node=x)), (node,), eps=1e-6, atol=1e-4)


def test_zero_weights_give_zero_output():
    sample = _sample()
    model = _model(sample)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    out = model(sample)
    assert out.shape == (sample.n_nodes, 2)
    assert torch.count_nonzero(out) == 0


def test_output_shape_per_level_count():
    for levels in (1, 2, 3):
        sample = _sample(levels=levels)
        out = _model(sample, levels=levels, out_dim=1)(sample)
        assert out.shape == (24, 1)
        assert torch.all(torch.isfinite(out))


def test_permutation_equivariance():
    sample = _sample()
    model = _model(sample)
    perm = torch.as_tensor(np.random.default_rng(0).permutation(sample.n_nodes))
    new_of_old = torch.argsort(perm)

    def fine_side(index, row):
        index = index.clone()
        index[row] = new_of_old[index[row]]
        return index

    relabeled = replace(
        sample,
        node=sample.node[perm],
        boundary_index=new_of_old[sample.boundary_index],
        parents=[new_of_old[sample.parents[0]]],
        down_index=[fine_side(sample.down_index[0], 0)],
        up_index=[fine_side(sample.up_index[0], 1)],
    )
    with torch.no_grad():
        torch.testing.assert_close(model(relabeled), model(sample)[perm], atol=1e-12, rtol=1e-10)


def test_structure_mismatch_raises():
    sample = _sample(levels=2)
    with pytest.raises(ValueError):
        _model(sample, levels=3)(sample)
    no_distant = _sample(levels=2, with_distant=False)
    with pytest.raises(ValueError):
        _model(no_distant)(no_distant)
    config = SMALL.model_copy(update={"n_distant_blocks": 0})
    assert _model(no_distant, config=config)(no_distant).shape == (24, 2)


def test_checkpoint_round_trip(tmp_path):
    sample = _sample()
    model = _model(sample)
    path = tmp_path / "model.msnn"
    assert save_checkpoint(path, model, {"variant": "helmholtz_dirichlet"}) == path.stat().st_size
    loaded, metadata = load_checkpoint(path, dtype=torch.float64)
    assert metadata == {"variant": "helmholtz_dirichlet"}
    with torch.no_grad():
        torch.testing.assert_close(loaded(sample), model(sample), atol=0, rtol=0)
