"""
Training loop: Huber loss, AdamW, cosine learning-rate schedule, gradient clipping and
random-rotation augmentation.
"""

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from scipy.spatial.transform import Rotation

from config import FeatureConfig, GraphConfig, ModelConfig, TrainConfig
from dataset import SampleRecord, rotate_sample
from features import build_features, edge_feature_dim, node_feature_dim
from graphs import build_multiscale_graphs
from network import MultiscaleGNN, SampleTensors, save_checkpoint


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TargetScale:
    """Per-channel affine map between raw traces and network targets."""

    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    @classmethod
    def identity(cls, channels: int) -> "TargetScale":
        return cls(mean=(0.0,) * channels, std=(1.0,) * channels)

    @classmethod
    def fit(cls, records: Sequence[SampleRecord]) -> "TargetScale":
        channels = np.concatenate([trace_channels(r) for r in records], axis=0)
        std = channels.std(axis=0)
        return cls(mean=tuple(float(m) for m in channels.mean(axis=0)),
                   std=tuple(float(s) if s > 0 else 1.0 for s in std))

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data: dict) -> "TargetScale":
        return cls(mean=tuple(data["mean"]), std=tuple(data["std"]))


@dataclass
class PreparedSample:
    record: SampleRecord
    inputs: SampleTensors
    target: torch.Tensor


def output_channels(variant: str) -> int:
    return 1 if variant == "laplace_dirichlet" else 2


def trace_channels(record: SampleRecord) -> np.ndarray:
    """(N, 1) real trace for Laplace, (N, 2) real/imaginary for Helmholtz."""
    values = record.trace.values
    if record.problem.is_complex:
        return np.stack([values.real, values.imag], axis=1)
    return values.real[:, None]


def channels_to_trace(channels: np.ndarray) -> np.ndarray:
    channels = np.asarray(channels, dtype=np.float64)
    if channels.shape[1] == 1:
        return channels[:, 0].astype(np.complex128)
    return channels[:, 0] + 1j * channels[:, 1]


def graph_seed(seed: int, epoch: int, sample_id: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, sample_id]).generate_state(1)[0])


def prepare_sample(record: SampleRecord, graph_cfg: GraphConfig, feature_cfg: FeatureConfig, seed: int,
                   scale: Optional[TargetScale] = None, with_distant: bool = True,
                   dtype: torch.dtype = torch.float32) -> PreparedSample:
    """Build graphs, features and the (scaled) target tensor for one record."""
    graphs = build_multiscale_graphs(
        record.mesh,
        levels=graph_cfg.levels,
        base_cell=graph_cfg.base_cell_factor * record.scene.target_edge_length,
        alpha=graph_cfg.alpha,
        n_candidates=graph_cfg.n_candidates,
        rng_seed=seed,
        half_extent=record.scene.environment_half_extent,
        with_distant=with_distant,
    )
    features = build_features(record.problem, graphs, feature_cfg)
    target = trace_channels(record)
    if scale is not None:
        target = (target - np.asarray(scale.mean)) / np.asarray(scale.std)
    return PreparedSample(record, SampleTensors.from_arrays(graphs, features, dtype), torch.as_tensor(target, dtype=dtype))


def build_model(variant: str, graph_cfg: GraphConfig, feature_cfg: FeatureConfig, model_cfg: ModelConfig) -> MultiscaleGNN:
    return MultiscaleGNN(
        node_dim=node_feature_dim(variant, feature_cfg),
        edge_dim=edge_feature_dim(variant, feature_cfg),
        out_dim=output_channels(variant),
        levels=graph_cfg.levels,
        config=model_cfg,
    )


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """lr_end + (lr_start - lr_end) * (1 + cos(pi * t / T)) / 2"""
    if total_steps <= 0:
        return lr_start
    t = min(max(step, 0), total_steps)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * t / total_steps))


def huber_loss(pred: torch.Tensor, target: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Mean Huber loss over all node-channel entries."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    return F.huber_loss(pred, target, reduction="mean", delta=delta)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.lr_start, betas=tuple(cfg.betas), eps=cfg.eps, weight_decay=cfg.weight_decay
    )


def train_step(model: MultiscaleGNN, optimizer: torch.optim.Optimizer, batch: Sequence[PreparedSample],
               step: int, total_steps: int, cfg: TrainConfig) -> float:
    """
    One optimizer update on a batch.

    Returns:
        float: Batch-mean loss

    Raises:
        TrainingDivergedError: Non-finite loss
    """
    if not batch:
        raise ValueError("empty batch")
    lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end)
    for group in optimizer.param_groups:
        group["lr"] = lr

    model.train()
    optimizer.zero_grad(set_to_none=True)
    total = 0.0
    # Samples in fixed order; gradients accumulate as the batch mean
    for sample in batch:
        loss = huber_loss(model(sample.inputs), sample.target, cfg.huber_delta)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss {loss.item()} at step {step} on sample {sample.record.sample_id} (lr {lr:.3e})"
            )
        (loss / len(batch)).backward()
        total += loss.item()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
    optimizer.step()
    return total / len(batch)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(None, rng).as_matrix()


def rotate_augment(record: SampleRecord, rng: np.random.Generator) -> SampleRecord:
    """Apply one uniform random rotation to positions, normals, x0 and v; labels stay put."""
    return rotate_sample(record, random_rotation(rng))


def train_model(records: List[SampleRecord], train_cfg: TrainConfig, graph_cfg: GraphConfig,
                feature_cfg: FeatureConfig, model_cfg: ModelConfig, seed: int = 0,
                run_dir: Optional[Path] = None, scale: Optional[TargetScale] = None) -> Tuple[MultiscaleGNN, pd.DataFrame]:
    """
    Train a fresh model on ``records``.

    Writes ``loss_log.csv`` and ``model.msnn`` into ``run_dir`` when given.

    Returns:
        tuple: (trained model, per-epoch loss log)
    """
    if not records:
        raise ValueError("no training records")
    variants = {r.variant for r in records}
    if len(variants) != 1:
        raise ValueError(f"training set mixes problem variants: {sorted(variants)}")
    variant = variants.pop()

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = build_model(variant, graph_cfg, feature_cfg, model_cfg)
    optimizer = make_optimizer(model, train_cfg)
    if scale is None:
        scale = TargetScale.fit(records) if train_cfg.normalize_targets else TargetScale.identity(output_channels(variant))
    with_distant = model_cfg.n_distant_blocks > 0

    def prepare(record: SampleRecord, epoch: int) -> PreparedSample:
        return prepare_sample(record, graph_cfg, feature_cfg, graph_seed(seed, epoch, record.sample_id),
                              scale=scale, with_distant=with_distant)

    fixed = None if train_cfg.augment else [prepare(r, 0) for r in records]
    n_batches = math.ceil(len(records) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * n_batches

    print(f">> Training on {len(records)} {variant} samples: {train_cfg.epochs} epochs x {n_batches} batches")
    history = []
    step = 0
    start = time.time()
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(records))
        losses = []
        for b in range(n_batches):
            indices = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            if fixed is not None:
                batch = [fixed[i] for i in indices]
            else:
                batch = [prepare(rotate_augment(records[i], rng), epoch) for i in indices]
            losses.append(train_step(model, optimizer, batch, step, total_steps, train_cfg))
            step += 1
        epoch_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "loss": epoch_loss, "lr": cosine_lr(step, total_steps, train_cfg.lr_start, train_cfg.lr_end)})

        elapsed = time.time() - start
        remaining = elapsed / epoch * (train_cfg.epochs - epoch)
        print(f"  Epoch {epoch}/{train_cfg.epochs} | loss {epoch_loss:.6f} | ETA {remaining / 60:.1f}min")

    log = pd.DataFrame(history, columns=["epoch", "loss", "lr"])
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        log.to_csv(run_dir / "loss_log.csv", index=False)
        values = np.concatenate([r.trace.values for r in records])
        save_checkpoint(run_dir / "model.msnn", model, {
            "variant": variant,
            "features": feature_cfg.model_dump(),
            "graphs": graph_cfg.model_dump(),
            "target_scale": scale.to_dict(),
            "train_trace_mean": [float(values.real.mean()), float(values.imag.mean())],
            "seed": int(seed),
        })
    logging.info(f"Training finished: loss {history[0]['loss']:.6f} -> {history[-1]['loss']:.6f}")
    return model, log
