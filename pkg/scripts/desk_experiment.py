"""
End-to-end desk-scale learning run for the Laplace-Dirichlet surrogate.

This script:
1. Generates a training set and a held-out test set (3 obstacles, edge 0.3)
2. Trains the multiscale surrogate with the default model
3. Evaluates it on the held-out set
4. Compares against the best constant predictor (per-dataset mean trace)

Note: This is a SLOW process (about 1-2 hours on a desktop CPU at the default sizes).
Pass --train-samples / --epochs to shrink it for a smoke run.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import FeatureConfig, GraphConfig, ModelConfig, TrainConfig
from dataset import generate_dataset, load_dataset
from metrics import constant_baseline_err_rel, evaluate_model
from plots import plot_error_scatter, plot_loss_curve
from trainer import TargetScale, output_channels, train_model
from utils import resolve_threads, setup_logging

VARIANT = "laplace_dirichlet"
N_OBSTACLES = 3
EDGE = 0.3


def best_constant_err_rel(records) -> float:
    """Err_rel of the per-dataset mean trace, the constant predictor the surrogate must beat."""
    values = np.concatenate([r.trace.values for r in records])
    return constant_baseline_err_rel(records, complex(values.mean()))


def main():
    parser = argparse.ArgumentParser(description="Desk-scale generate / train / evaluate run")
    parser.add_argument("--out", type=Path, default=Path("runs/desk_experiment"))
    parser.add_argument("--train-samples", type=int, default=256)
    parser.add_argument("--test-samples", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    setup_logging()
    threads = resolve_threads(args.threads)
    print("=" * 60)
    print("Desk experiment: Laplace-Dirichlet multiscale surrogate")
    print("=" * 60)
    print(f"Train samples: {args.train_samples} | Test samples: {args.test_samples} | Epochs: {args.epochs}")

    start_time = time.time()
    train_dir, test_dir = args.out / "train", args.out / "test"
    generate_dataset(VARIANT, args.train_samples, N_OBSTACLES, EDGE, args.seed, train_dir, threads=threads)
    # Disjoint seed range for the held-out scenes
    generate_dataset(VARIANT, args.test_samples, N_OBSTACLES, EDGE, args.seed + 10 * args.train_samples + 7919,
                     test_dir, threads=threads)
    _, train_records = load_dataset(train_dir)
    _, test_records = load_dataset(test_dir)

    graph_cfg, feature_cfg, model_cfg = GraphConfig(), FeatureConfig(), ModelConfig()
    train_cfg = TrainConfig(epochs=args.epochs)
    scale = TargetScale.identity(output_channels(VARIANT))
    model, log = train_model(train_records, train_cfg, graph_cfg, feature_cfg, model_cfg,
                             seed=args.seed, run_dir=args.out / "model", scale=scale)
    plot_loss_curve(log, args.out / "loss_curve.png")

    report = evaluate_model(model, test_records, graph_cfg, feature_cfg, scale, VARIANT, seed=args.seed,
                            threads=threads)
    report.to_csv(args.out / "test_metrics.csv")
    plot_error_scatter(report.per_sample, args.out / "error_scatter.png")

    baseline = best_constant_err_rel(test_records)
    loss_ratio = float(log["loss"].iloc[-1] / log["loss"].iloc[0])
    summary = {
        "test_err_rel": report.mean["err_rel"],
        "constant_err_rel": baseline,
        "err_ratio": report.mean["err_rel"] / baseline,
        "loss_ratio": loss_ratio,
        "passed": bool(report.mean["err_rel"] <= 0.5 * baseline and loss_ratio < 0.5),
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    print(f"\n{'=' * 60}")
    print("Completed!")
    print(f"{'=' * 60}")
    print(f"  Surrogate Err_rel:       {summary['test_err_rel']:.4f}")
    print(f"  Constant-predictor:      {summary['constant_err_rel']:.4f}")
    print(f"  Ratio (target <= 0.5):   {summary['err_ratio']:.3f}")
    print(f"  Loss last/first (< 0.5): {loss_ratio:.3f}")
    print(f"  Total time: {(time.time() - start_time) / 60:.1f} minutes")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
