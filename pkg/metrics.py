"""
Trace error metrics, obstacle dispersion and model evaluation reports.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from scipy.spatial import cKDTree

from config import FeatureConfig, GraphConfig
from dataset import SampleRecord
from geometry import Scene
from network import MultiscaleGNN
from trainer import PreparedSample, TargetScale, channels_to_trace, graph_seed, prepare_sample
from utils import ordered_map

METRIC_COLUMNS = ["err_rel", "err_ampl", "err_angle"]
CSV_COLUMNS = ["sample_id", "mae", "gmres_iterations", "wavenumber", "dispersion", "err_rel", "err_ampl", "err_angle"]


class MetricError(ValueError):
    pass


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.complex128).reshape(-1)
    target = np.asarray(target, dtype=np.complex128).reshape(-1)
    if pred.shape != target.shape:
        raise MetricError(f"prediction has {pred.size} entries, target {target.size}")
    return pred, target


def err_rel(pred, target) -> float:
    """sum |p_hat - p| / sum |p|"""
    pred, target = _pair(pred, target)
    denominator = np.abs(target).sum()
    if denominator == 0.0:
        raise MetricError("relative error undefined for an all-zero target")
    return float(np.abs(pred - target).sum() / denominator)


def err_ampl(pred, target) -> float:
    """Mean relative amplitude error."""
    pred, target = _pair(pred, target)
    magnitude = np.abs(target)
    if np.any(magnitude == 0.0):
        raise MetricError("amplitude error undefined where the target vanishes")
    return float(np.mean(np.abs((np.abs(pred) - magnitude) / magnitude)))


def err_angle(pred, target) -> float:
    """Mean absolute wrapped phase difference, in [0, pi]."""
    pred, target = _pair(pred, target)
    if np.any(pred == 0.0) or np.any(target == 0.0):
        raise MetricError("phase error undefined for zero entries")
    delta = np.angle(pred) - np.angle(target)
    return float(np.mean(np.abs(np.arctan2(np.sin(delta), np.cos(delta)))))


def mean_absolute_error(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def dispersion_from_points(points: np.ndarray, obstacle_ids: np.ndarray) -> float:
    """Max over obstacles of the min distance to any other obstacle's points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    obstacle_ids = np.asarray(obstacle_ids).reshape(-1)
    labels = np.unique(obstacle_ids)
    if len(labels) < 2:
        raise MetricError("dispersion needs at least two obstacles")
    trees = {label: cKDTree(points[obstacle_ids == label]) for label in labels}
    nearest = []
    for label in labels:
        own = points[obstacle_ids == label]
        nearest.append(min(trees[other].query(own)[0].min() for other in labels if other != label))
    return float(max(nearest))


def obstacle_dispersion(scene: Scene) -> float:
    return dispersion_from_points(scene.mesh.vertices, scene.mesh.vertex_obstacle)


def sample_metrics(pred, target) -> Dict[str, float]:
    return {
        "mae": mean_absolute_error(pred, target),
        "err_rel": err_rel(pred, target),
        "err_ampl": err_ampl(pred, target),
        "err_angle": err_angle(pred, target),
    }


@dataclass
class MetricReport:
    per_sample: pd.DataFrame
    mean: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: List[dict]) -> "MetricReport":
        frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
        return cls(per_sample=frame, mean={name: float(frame[name].mean()) for name in ["mae"] + METRIC_COLUMNS})

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.per_sample.to_csv(path, index=False)
        return path


def predict_trace(model: MultiscaleGNN, sample: PreparedSample, scale: TargetScale) -> np.ndarray:
    """Per-vertex complex trace predicted by ``model``."""
    model.eval()
    with torch.no_grad():
        out = model(sample.inputs).double().cpu().numpy()
    out = out * np.asarray(scale.std) + np.asarray(scale.mean)
    return channels_to_trace(out)


def _dispersion_or_nan(scene: Scene) -> float:
    return obstacle_dispersion(scene) if scene.n_obstacles >= 2 else float("nan")


def evaluate_model(model: MultiscaleGNN, records: Sequence[SampleRecord], graph_cfg: GraphConfig,
                   feature_cfg: FeatureConfig, scale: TargetScale, variant: str, seed: int = 0,
                   threads: int = 1) -> MetricReport:
    """
    Metrics of ``model`` on every record.

    ``seed`` drives the distant-graph resampling, so repeated calls with different seeds
    measure the spread caused by the random edge selection.
    """
    mismatched = sorted({r.variant for r in records if r.variant != variant})
    if mismatched:
        raise MetricError(f"model trained on {variant} cannot evaluate {', '.join(mismatched)} samples")
    with_distant = model.n_distant_blocks > 0

    prepared = ordered_map(
        lambda r: prepare_sample(r, graph_cfg, feature_cfg, graph_seed(seed, 0, r.sample_id), with_distant=with_distant),
        records,
        threads=threads,
    )

    rows = []
    elapsed = 0.0
    for sample in prepared:
        record = sample.record
        start = time.perf_counter()
        pred = predict_trace(model, sample, scale)
        elapsed += time.perf_counter() - start
        row = {
            "sample_id": record.sample_id,
            "gmres_iterations": record.gmres_iterations,
            "wavenumber": record.wavenumber if record.wavenumber is not None else float("nan"),
            "dispersion": _dispersion_or_nan(record.scene),
        }
        row.update(sample_metrics(pred, record.trace.values))
        rows.append(row)
    logging.info(f"Surrogate forward pass: {elapsed / max(1, len(prepared)) * 1000:.1f} ms per sample")
    return MetricReport.from_rows(rows)


def evaluate_over_seeds(model: MultiscaleGNN, records: Sequence[SampleRecord], graph_cfg: GraphConfig,
                        feature_cfg: FeatureConfig, scale: TargetScale, variant: str, seeds: Sequence[int],
                        threads: int = 1) -> Tuple[List[MetricReport], Dict[str, float]]:
    """
    Repeat :func:`evaluate_model` per seed.

    Returns:
        tuple: (report per seed, summary with ``<metric>`` = mean over seeds and
        ``<metric>_rel_std`` = std / mean over seeds)
    """
    if not seeds:
        raise ValueError("need at least one evaluation seed")
    reports = [evaluate_model(model, records, graph_cfg, feature_cfg, scale, variant, seed=s, threads=threads)
               for s in seeds]
    summary = {}
    for name in ["mae"] + METRIC_COLUMNS:
        values = np.array([report.mean[name] for report in reports])
        mean = float(values.mean())
        summary[name] = mean
        summary[f"{name}_rel_std"] = float(values.std() / mean) if mean != 0 else 0.0
    return reports, summary


def constant_baseline_err_rel(records: Sequence[SampleRecord], value: complex) -> float:
    """Dataset-mean relative error of a predictor that outputs ``value`` at every vertex."""
    return float(np.mean([err_rel(np.full(r.trace.values.shape, value), r.trace.values) for r in records]))
