import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import ConfigError, FeatureConfig, GraphConfig, RunConfig, resolve_run_config, write_resolved_config
from dataset import (
    SampleRecord,
    generate_dataset,
    generate_sample,
    load_dataset,
    load_manifest,
    read_sample,
    sample_file_name,
    write_sample,
)
from fieldgrid import evaluate_field, export_field
from graphs import build_multiscale_graphs, dump_graphs_csv
from metrics import constant_baseline_err_rel, evaluate_over_seeds, predict_trace
from network import load_checkpoint
from oracles import run_selftest
from plots import plot_error_scatter, plot_loss_curve
from trainer import TargetScale, graph_seed, output_channels, prepare_sample, train_model
from utils import resolve_threads, set_deterministic, setup_logging

FIELD_EXTENSIONS = {"csv": "csv", "pgm": "pgm", "png": "png"}
# Crowded scenes get more distant-edge candidates at inference
CROWDED_SCENE_OBSTACLES = 6
CROWDED_SCENE_CANDIDATES = 3


class SelftestFailed(RuntimeError):
    pass


class UsageError(ConfigError):
    pass


class MscatArgumentParser(argparse.ArgumentParser):
    """Parser whose failures raise instead of printing usage and exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = MscatArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file; explicit flags override its values")
    common.add_argument("--run-dir", type=Path, help="Directory receiving every output of the run")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--threads", type=int, help="Thread pool size (default: MSCAT_THREADS, else all cores)")
    common.add_argument("--deterministic", action="store_true", default=None, help="Ordered single-thread reductions")
    common.add_argument("--verbose", action="store_true", default=None, help="Debug logging")

    parser = MscatArgumentParser(
        prog="mscat",
        description="Multiple scattering: BEM ground truth and a multiscale GNN surrogate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="Generate a ground-truth dataset")
    p.add_argument("--problem", choices=["laplace", "helmholtz"])
    p.add_argument("--samples", type=int)
    p.add_argument("--obstacles", type=int)
    p.add_argument("--edge", type=float, help="Target mesh edge length")

    p = sub.add_parser("solve", parents=[common], help="Solve one random scene and report GMRES convergence")
    p.add_argument("--problem", choices=["laplace", "helmholtz"])
    p.add_argument("--obstacles", type=int)
    p.add_argument("--edge", type=float)

    p = sub.add_parser("graphs", parents=[common], help="Dump the multiscale graphs of one sample to CSV")
    p.add_argument("--data", type=Path, help="Dataset directory or a single .msc file")
    p.add_argument("--index", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nc", type=int, help="Distant-edge candidates per node")

    p = sub.add_parser("train", parents=[common], help="Train the surrogate on a dataset")
    p.add_argument("--data", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nc", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--expansion", type=int)
    p.add_argument("--boundary-blocks", type=int)
    p.add_argument("--distant-blocks", type=int)
    p.add_argument("--no-augment", action="store_true", default=None)
    p.add_argument("--normalize-targets", action="store_true", default=None)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint, optionally sweeping n_c and obstacle counts")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--seeds", type=int, help="Number of distant-graph seeds")
    p.add_argument("--nc", type=_int_list, help="Comma-separated n_c values, e.g. 1,2,3")
    p.add_argument("--obstacles", type=_int_list, help="Comma-separated obstacle counts; generates a test set for each")
    p.add_argument("--samples", type=int, help="Samples per generated test set")
    p.add_argument("--edge", type=float)

    p = sub.add_parser("field", parents=[common], help="Export the total field on a planar grid")
    p.add_argument("--data", type=Path)
    p.add_argument("--index", type=int)
    p.add_argument("--checkpoint", type=Path, help="Also export the surrogate field and its error")
    p.add_argument("--format", dest="field_format", choices=list(FIELD_EXTENSIONS))
    p.add_argument("--resolution", type=int)
    p.add_argument("--side", type=float)
    p.add_argument("--z0", type=float)

    sub.add_parser("selftest", parents=[common], help="Run the analytic BEM oracles")
    return parser


# Flag name -> nested config key
FLAG_KEYS = {
    "run_dir": ("run_dir",),
    "seed": ("seed",),
    "threads": ("threads",),
    "deterministic": ("deterministic",),
    "verbose": ("verbose",),
    "problem": ("problem",),
    "edge": ("edge",),
    "data": ("data",),
    "checkpoint": ("checkpoint",),
    "index": ("index",),
    "field_format": ("field_format",),
    "levels": ("graphs", "levels"),
    "alpha": ("graphs", "alpha"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr_start": ("train", "lr_start"),
    "lr_end": ("train", "lr_end"),
    "normalize_targets": ("train", "normalize_targets"),
    "latent_dim": ("model", "latent_dim"),
    "expansion": ("model", "expansion"),
    "boundary_blocks": ("model", "n_boundary_blocks"),
    "distant_blocks": ("model", "n_distant_blocks"),
    "seeds": ("eval", "seeds"),
    "resolution": ("grid", "resolution"),
    "side": ("grid", "side"),
    "z0": ("grid", "z0"),
}


def collect_overrides(args: argparse.Namespace) -> dict:
    """Nested override dict from every flag that was actually given."""
    overrides: Dict = {"command": args.command}

    def put(keys: Tuple[str, ...], value):
        node = overrides
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value

    values = vars(args)
    for flag, keys in FLAG_KEYS.items():
        if values.get(flag) is not None:
            value = values[flag]
            put(keys, str(value) if isinstance(value, Path) else value)
    if values.get("no_augment"):
        put(("train", "augment"), False)

    # --nc and --obstacles/--samples mean different things per subcommand
    if args.command == "eval":
        if values.get("nc") is not None:
            put(("eval", "n_candidates"), values["nc"])
        if values.get("obstacles") is not None:
            put(("eval", "obstacle_counts"), values["obstacles"])
        if values.get("samples") is not None:
            put(("eval", "samples"), values["samples"])
    else:
        if values.get("nc") is not None:
            put(("graphs", "n_candidates"), values["nc"])
        for flag in ("obstacles", "samples"):
            if values.get(flag) is not None:
                put((flag,), values[flag])
    return overrides


def _require(value, flag: str, command: str):
    if value is None:
        raise ConfigError(f"{command} needs {flag}")
    return value


def load_record(config: RunConfig) -> SampleRecord:
    """One record from ``--data``: a dataset directory (picked by ``--index``) or a single sample file."""
    data = Path(_require(config.data, "--data", config.command))
    if data.is_file():
        return read_sample(data)
    manifest = load_manifest(data)
    if config.index >= manifest.n_samples:
        raise ConfigError(f"index {config.index} out of range for a dataset of {manifest.n_samples} samples")
    return read_sample(data / sample_file_name(config.index))


def load_model(config: RunConfig):
    """Checkpoint plus the feature, graph and target settings it was trained with."""
    model, metadata = load_checkpoint(_require(config.checkpoint, "--checkpoint", config.command))
    feature_cfg = FeatureConfig(**metadata["features"])
    graph_cfg = GraphConfig(**metadata["graphs"])
    scale = TargetScale.from_dict(metadata["target_scale"])
    return model, metadata, feature_cfg, graph_cfg, scale


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_generate(config: RunConfig, threads: int) -> int:
    manifest = generate_dataset(config.variant, config.samples, config.obstacles, config.edge, config.seed,
                                config.run_dir, threads=threads)
    print(f"Wrote {manifest.n_samples} samples to {config.run_dir} ({manifest.redraws} re-draws)")
    return 0


def cmd_solve(config: RunConfig, threads: int) -> int:
    record, report = generate_sample(config.variant, config.obstacles, config.edge, config.seed, threads=threads)
    write_sample(record, config.run_dir / "sample.msc")
    summary = {
        "variant": record.variant,
        "n_vertices": int(record.mesh.n_vertices),
        "n_triangles": int(record.mesh.n_triangles),
        "wavenumber": record.wavenumber,
        **report.to_dict(),
        "residual_history": report.residual_history,
    }
    (config.run_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{record.mesh.n_triangles} triangles | {report.iterations} GMRES iterations | "
          f"relative residual {report.final_relative_residual:.2e}")
    return 0


def cmd_graphs(config: RunConfig, threads: int) -> int:
    record = load_record(config)
    graphs = build_multiscale_graphs(
        record.mesh,
        levels=config.graphs.levels,
        base_cell=config.graphs.base_cell_factor * record.scene.target_edge_length,
        alpha=config.graphs.alpha,
        n_candidates=config.graphs.n_candidates,
        rng_seed=graph_seed(config.seed, 0, record.sample_id),
        half_extent=record.scene.environment_half_extent,
    )
    paths = dump_graphs_csv(graphs, config.run_dir / "graphs")
    sizes = " -> ".join(str(n) for n in graphs.level_sizes())
    print(f"Levels {sizes} nodes | {graphs.distant.n_edges} distant edges | {len(paths)} CSV files")
    return 0


def cmd_train(config: RunConfig, threads: int) -> int:
    manifest, records = load_dataset(_require(config.data, "--data", "train"))
    scale = None
    if config.train.normalize_targets:
        channels = output_channels(manifest.variant)
        scale = TargetScale(mean=tuple(manifest.trace_mean[:channels]), std=tuple(manifest.trace_std[:channels]))
    _, log = train_model(records, config.train, config.graphs, config.features, config.model,
                         seed=config.seed, run_dir=config.run_dir, scale=scale)
    plot_loss_curve(log, config.run_dir / "loss_curve.png")
    print(f"Final loss {log['loss'].iloc[-1]:.6f} | checkpoint {config.run_dir / 'model.msnn'}")
    return 0


def _eval_sets(config: RunConfig, variant: str, threads: int) -> List[Tuple[str, int, List[SampleRecord]]]:
    if config.eval.obstacle_counts:
        sets = []
        for count in config.eval.obstacle_counts:
            out_dir = config.run_dir / f"test_obstacles_{count}"
            generate_dataset(variant, config.eval.samples, count, config.edge, config.seed, out_dir, threads=threads)
            _, records = load_dataset(out_dir)
            sets.append((out_dir.name, count, records))
        return sets
    manifest, records = load_dataset(_require(config.data, "--data or --obstacles", "eval"))
    return [(Path(config.data).name, manifest.n_obstacles, records)]


def inference_candidates(n_obstacles: int, trained: int) -> int:
    """Default n_c for a test set: the trained value, raised for crowded scenes."""
    if n_obstacles >= CROWDED_SCENE_OBSTACLES:
        return max(trained, CROWDED_SCENE_CANDIDATES)
    return trained


def cmd_eval(config: RunConfig, threads: int) -> int:
    model, metadata, feature_cfg, graph_cfg, scale = load_model(config)
    variant = metadata["variant"]
    seeds = list(range(config.seed, config.seed + config.eval.seeds))
    baseline_value = complex(*metadata["train_trace_mean"])

    rows = []
    first_report = None
    for label, n_obstacles, records in _eval_sets(config, variant, threads):
        baseline = constant_baseline_err_rel(records, baseline_value)
        n_candidates = config.eval.n_candidates or [inference_candidates(n_obstacles, graph_cfg.n_candidates)]
        for n_c in n_candidates:
            print(f">> Evaluating {label} with n_c={n_c} over {len(seeds)} seed(s)")
            reports, summary = evaluate_over_seeds(
                model, records, graph_cfg.model_copy(update={"n_candidates": n_c}), feature_cfg, scale,
                variant, seeds, threads=threads,
            )
            reports[0].to_csv(config.run_dir / f"metrics_{label}_nc{n_c}.csv")
            if first_report is None:
                first_report = reports[0]
            rows.append({"dataset": label, "n_obstacles": n_obstacles, "n_candidates": n_c,
                         "n_samples": len(records), "seeds": len(seeds), **summary,
                         "baseline_err_rel": baseline})

    summary_frame = pd.DataFrame(rows)
    summary_frame.to_csv(config.run_dir / "summary.csv", index=False)
    first_report.to_csv(config.run_dir / "metrics.csv")
    plot_error_scatter(first_report.per_sample, config.run_dir / "error_scatter.png")
    for row in rows:
        print(f"{row['dataset']} n_c={row['n_candidates']}: err_rel {row['err_rel']:.4f} "
              f"(rel std {row['err_rel_rel_std']:.2%}) | constant baseline {row['baseline_err_rel']:.4f}")
    return 0


def cmd_field(config: RunConfig, threads: int) -> int:
    record = load_record(config)
    ext = FIELD_EXTENSIONS[config.field_format]
    truth = evaluate_field(record.scene, record.problem, record.trace.values, config.grid, threads=threads)
    export_field(truth, config.run_dir / f"field_truth.{ext}", config.field_format)

    if config.checkpoint is not None:
        model, metadata, feature_cfg, graph_cfg, scale = load_model(config)
        if metadata["variant"] != record.variant:
            raise ConfigError(f"checkpoint was trained on {metadata['variant']}, sample is {record.variant}")
        sample = prepare_sample(record, graph_cfg, feature_cfg, graph_seed(config.seed, 0, record.sample_id),
                                with_distant=model.n_distant_blocks > 0)
        predicted = evaluate_field(record.scene, record.problem, predict_trace(model, sample, scale),
                                   config.grid, threads=threads)
        export_field(predicted, config.run_dir / f"field_pred.{ext}", config.field_format)
        error = predicted.difference(truth)
        export_field(error, config.run_dir / f"field_error.{ext}", config.field_format)
        valid = ~error.mask
        print(f"Max field error {np.nanmax(np.abs(error.total[valid])):.4e} on {int(valid.sum())} cells")
    return 0


def cmd_selftest(config: RunConfig, threads: int) -> int:
    results = run_selftest(threads=threads)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise SelftestFailed(f"{len(failed)} oracle(s) failed: {', '.join(failed)}")
    print(f"All {len(results)} oracles passed")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "graphs": cmd_graphs,
    "train": cmd_train,
    "eval": cmd_eval,
    "field": cmd_field,
    "selftest": cmd_selftest,
}


def _report_error(e: BaseException):
    message = " ".join(str(e).split())
    print(f"error: {type(e).__name__}: {message}", file=sys.stderr)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, execute the subcommand and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _report_error(e)
        return 2
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    try:
        config = resolve_run_config(collect_overrides(args), args.config)
        threads = resolve_threads(config.threads)
    except (ConfigError, ValidationError, ValueError) as e:
        _report_error(e)
        return 2

    setup_logging(config.verbose)
    set_deterministic(config.deterministic, threads)
    try:
        write_resolved_config(config, config.run_dir)
        logging.debug(f"{config.command}: run dir {config.run_dir}, {threads} thread(s)")
        return COMMANDS[config.command](config, threads)
    except (ConfigError, ValidationError) as e:
        _report_error(e)
        return 2
    except Exception as e:
        _report_error(e)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
