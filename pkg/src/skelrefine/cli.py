"""Batch command line: corpus synthesis, training, refinement, evaluation.

One JSON config file describes a whole experiment (paths, corpus, network
and fusion settings); subcommands consume the pieces they need. Exit codes:
0 success, 1 usage or configuration problem, 2 data problem, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import drnn, fusion, metrics, seqio, synth
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateGeometryError,
    DependencyError,
    DimensionError,
    EncodingError,
    InsufficientFramesError,
    NumericalError,
    SkelRefineError,
)
from .optim import OptimizerSpec
from .skeleton import DEFAULT_TREE, velocities

NETWORK_NAMES = ("pdrnn", "vdrnn", "vdrnn_plus")

_DEFAULT_WINDOWS = {"pdrnn": drnn.POSITION_WINDOW, "vdrnn": drnn.VELOCITY_WINDOW,
                    "vdrnn_plus": drnn.VELOCITY_WINDOW}


@dataclass
class PipelineConfig:
    corpus_dir: Path
    models_dir: Path
    outputs_dir: Path
    motion: synth.MotionConfig
    corruption: synth.CorruptionConfig
    split_ratios: tuple[float, float, float]
    networks: dict[str, drnn.DrnnConfig]
    optimizer: OptimizerSpec
    network_iterations: dict[str, int]
    knn_k: int
    theta: float
    theta_plus: float
    variants: tuple[str, ...]


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name)
    if value is None:
        raise ConfigurationError(f"config missing {name!r} section")
    if not isinstance(value, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    return value


def load_config(path, seed_override: int | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not raw:
        raise ConfigurationError(f"config {path} must be a non-empty JSON object")

    paths = _section(raw, "paths")
    base = path.parent
    try:
        corpus_dir = base / paths["corpus"]
        models_dir = base / paths["models"]
        outputs_dir = base / paths["outputs"]
    except KeyError as exc:
        raise ConfigurationError(f"paths section missing {exc}") from exc

    corpus_raw = dict(_section(raw, "corpus"))
    corruption_raw = corpus_raw.pop("corruption", {})
    split_ratios = tuple(corpus_raw.pop("split_ratios", synth.DEFAULT_SPLIT_RATIOS))
    total_frames = corpus_raw.pop("total_frames", None)
    if total_frames is not None:
        corpus_raw.setdefault("n_frames", total_frames)
    if seed_override is not None:
        corpus_raw["seed"] = seed_override
    motion = synth.MotionConfig.from_dict(corpus_raw)
    corruption = synth.CorruptionConfig.from_dict(corruption_raw)
    synth.split_frame_counts(motion.n_frames, split_ratios)

    networks: dict[str, drnn.DrnnConfig] = {}
    network_iterations: dict[str, int] = {}
    for name in NETWORK_NAMES:
        block = dict(raw.get(name, {}))
        iterations = block.pop("max_iterations", None)
        if iterations is not None:
            network_iterations[name] = int(iterations)
        block.setdefault("input_dim", 48)
        block.setdefault("output_dim", 48)
        block.setdefault("hidden_sizes", [256, 256, 256])
        block.setdefault("recurrent_layer_index", 2)
        block.setdefault("window_length", _DEFAULT_WINDOWS[name])
        block.setdefault("seed", 0)
        networks[name] = drnn.DrnnConfig.from_dict(block)

    optimizer_raw = raw.get("optimizer", {})
    if not isinstance(optimizer_raw, dict):
        raise ConfigurationError("optimizer section must be an object")
    try:
        optimizer = OptimizerSpec(**optimizer_raw)
    except TypeError as exc:
        raise ConfigurationError(f"bad optimizer section: {exc}") from exc

    fusion_raw = raw.get("fusion", {})
    knn_k = int(fusion_raw.get("k", 300))
    if knn_k < 1:
        raise ConfigurationError("fusion k must be at least 1")
    theta = float(fusion_raw.get("theta", 0.05))
    theta_plus = float(fusion_raw.get("theta_plus", 0.05))

    variants = tuple(raw.get("variants", ["raw", "pdrnn", "sknn", "kf", "sknnkf"]))
    for variant in variants:
        if variant not in fusion.PIPELINE_VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r} in config")

    return PipelineConfig(
        corpus_dir=corpus_dir,
        models_dir=models_dir,
        outputs_dir=outputs_dir,
        motion=motion,
        corruption=corruption,
        split_ratios=split_ratios,
        networks=networks,
        optimizer=optimizer,
        network_iterations=network_iterations,
        knn_k=knn_k,
        theta=theta,
        theta_plus=theta_plus,
        variants=variants,
    )


def _checkpoint_path(models_dir: Path, name: str) -> Path:
    return models_dir / f"{name}.json"


def _load_required_checkpoint(models_dir: Path, name: str, needed_for: str) -> drnn.DrnnParams:
    path = _checkpoint_path(models_dir, name)
    if not path.exists():
        raise DependencyError(
            f"{needed_for} requires the {name} checkpoint; "
            f"run 'skelrefine train --which {name}' first ({path} not found)"
        )
    return drnn.load_checkpoint(path)


def _kalman_from_validation(corpus, pdrnn_params, vdrnn_params, tree):
    refined_val = drnn.refine_positions(pdrnn_params, corpus.validation.corrupted, tree)
    refined_val_vel = drnn.refine_velocities(vdrnn_params, refined_val)
    clean_val = corpus.validation.clean
    return fusion.estimate_noise_covariances(
        clean_val.data - refined_val.data,
        velocities(clean_val) - refined_val_vel,
    )


def _training_streams(which: str, corpus, cfg: PipelineConfig, tree):
    """Input/target streams for one network, for train and validation splits."""
    out = {}
    if which == "pdrnn":
        from .skeleton import sequence_to_relative

        for split_name, pair in (("train", corpus.train), ("validation", corpus.validation)):
            out[split_name] = (
                sequence_to_relative(pair.corrupted, tree).data,
                sequence_to_relative(pair.clean, tree).data,
            )
        return out

    pdrnn_params = _load_required_checkpoint(cfg.models_dir, "pdrnn", which)
    if which == "vdrnn":
        for split_name, pair in (("train", corpus.train), ("validation", corpus.validation)):
            refined = drnn.refine_positions(pdrnn_params, pair.corrupted, tree)
            out[split_name] = (velocities(refined), velocities(pair.clean))
        return out

    # vdrnn_plus: velocities of the Kalman state stream, which needs the
    # fitted covariances and therefore both earlier networks
    vdrnn_params = _load_required_checkpoint(cfg.models_dir, "vdrnn", which)
    kalman_r, kalman_q = _kalman_from_validation(corpus, pdrnn_params, vdrnn_params, tree)
    fusion.write_covariances(cfg.models_dir / "kalman.json", kalman_r, kalman_q)
    for split_name, pair in (("train", corpus.train), ("validation", corpus.validation)):
        refined = drnn.refine_positions(pdrnn_params, pair.corrupted, tree)
        refined_vel = drnn.refine_velocities(vdrnn_params, refined)
        states = fusion.kalman_filter_stream(refined.data, refined_vel, kalman_r, kalman_q)
        out[split_name] = (np.diff(states, axis=0), velocities(pair.clean))
    return out


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.seed)
    out_dir = Path(args.out) if args.out else cfg.corpus_dir
    corpus = synth.build_corpus(cfg.motion, cfg.corruption, cfg.split_ratios)
    manifest_path = synth.write_corpus(corpus, out_dir)
    counts = {name: len(pair.clean) for name, pair in corpus.splits().items()}
    print(json.dumps({"manifest": str(manifest_path), "frames": counts}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    which = args.which
    corpus = synth.read_corpus(cfg.corpus_dir)
    tree = DEFAULT_TREE
    net_cfg = cfg.networks[which]
    if args.seed is not None:
        net_cfg = replace(net_cfg, seed=args.seed)
    cfg.models_dir.mkdir(parents=True, exist_ok=True)

    streams = _training_streams(which, corpus, cfg, tree)
    train_batch = drnn.batch_from_streams(*streams["train"], net_cfg.window_length)
    val_batch = drnn.batch_from_streams(*streams["validation"], net_cfg.window_length)

    optimizer = cfg.optimizer
    if which in cfg.network_iterations:
        optimizer = replace(optimizer, max_iterations=cfg.network_iterations[which])
    result = drnn.train(net_cfg, train_batch, val_batch, optimizer)

    checkpoint = _checkpoint_path(cfg.models_dir, which)
    drnn.save_checkpoint(checkpoint, result.params)
    loss_csv = cfg.models_dir / f"{which}_loss.csv"
    train_size = train_batch.targets.size
    val_size = val_batch.targets.size
    with loss_csv.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "train_sse", "train_mse", "validation_sse", "validation_mse"]
        )
        for i, (t_loss, v_loss) in enumerate(zip(result.train_losses, result.validation_losses)):
            writer.writerow(
                [i, repr(t_loss), repr(t_loss / train_size), repr(v_loss), repr(v_loss / val_size)]
            )
    print(
        json.dumps(
            {
                "checkpoint": str(checkpoint),
                "loss_csv": str(loss_csv),
                "iterations": result.iterations,
                "converged": result.converged,
                "message": result.message,
                "final_train_mse": result.train_losses[-1] / train_size,
                "final_validation_mse": result.validation_losses[-1] / val_size,
            }
        )
    )
    return 0


def cmd_refine(args) -> int:
    cfg = load_config(args.config)
    variant = args.variant
    if variant not in fusion.PIPELINE_VARIANTS:
        raise ConfigurationError(
            f"unknown variant {variant!r}; choose from {', '.join(fusion.PIPELINE_VARIANTS)}"
        )
    seq = seqio.read_sequence(args.input)
    tree = DEFAULT_TREE

    networks = {}
    for name in fusion.required_networks(variant):
        networks[name] = _load_required_checkpoint(cfg.models_dir, name, f"variant {variant!r}")
    if variant == "raw":
        models = fusion.FusionModels(tree=tree, knn_k=cfg.knn_k)
    elif variant == "pdrnn":
        models = fusion.FusionModels(tree=tree, knn_k=cfg.knn_k, pdrnn=networks["pdrnn"])
    else:
        corpus = synth.read_corpus(cfg.corpus_dir)
        models = fusion.fit_fusion_models(
            corpus,
            tree,
            pdrnn=networks.get("pdrnn"),
            vdrnn=networks.get("vdrnn"),
            vdrnn_plus=networks.get("vdrnn_plus"),
            k=cfg.knn_k,
            theta=cfg.theta,
            theta_plus=cfg.theta_plus,
            variants=(variant,),
        )

    refined = fusion.run_pipeline(variant, seq, models)
    out_path = Path(args.out) if args.out else cfg.outputs_dir / f"{variant}.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    seqio.write_sequence(out_path, refined)
    print(json.dumps({"variant": variant, "output": str(out_path), "frames": len(refined)}))
    return 0


def cmd_eval(args) -> int:
    pred = seqio.read_sequence(args.pred)
    truth = seqio.read_sequence(args.truth)
    report = metrics.evaluate(pred, truth)
    print(report.to_json())
    if args.out:
        metrics.write_histogram_csv(args.out, report)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skelrefine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate the paired synthetic corpus")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("--out", default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one network in dependency order")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--which", required=True, choices=NETWORK_NAMES)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_refine = sub.add_parser("refine", help="refine a sequence with one variant")
    p_refine.add_argument("--config", required=True)
    p_refine.add_argument("--variant", required=True)
    p_refine.add_argument("--input", required=True)
    p_refine.add_argument("--out", default=None)
    p_refine.set_defaults(func=cmd_refine)

    p_eval = sub.add_parser("eval", help="compare a refined sequence to ground truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", default=None, help="histogram CSV path")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        DataError,
        DependencyError,
        DimensionError,
        EncodingError,
        InsufficientFramesError,
        DegenerateGeometryError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SkelRefineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
