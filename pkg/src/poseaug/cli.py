"""Command-line entry point.

Commands: synth-gen, train, rank-augs, eval, svd, validate-combo.  Every
command is deterministic given its config and seed; run directories hold
the resolved config, CSV outputs and checkpoints, with wall-clock metadata
kept apart in run_meta.json so reruns stay byte-identical.

Exit codes: 0 success, 1 validator or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, model as mdl, tensorio
from .augment import PIPELINE_PRESETS, get_pipeline, validate_combination
from .config import RunConfig, load_run_config, resolved_yaml
from .data import SynthConfig, get_profile, load_dataset, split_labeled_unlabeled, write_synthetic_dataset
from .errors import InvalidParameterError, PoseaugError
from .ssltrain import EvalConfig, evaluate, rank_augmentations, run_training

__all__ = ["main"]


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_meta(out: Path, args: argparse.Namespace) -> None:
    meta = {"command": sys.argv[1:] if sys.argv[1:] else [], "unix_time": time.time()}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1))


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_meta(out, args)
    return out


def _split_list(raw: str) -> list[str]:
    return [item for item in (s.strip() for s in raw.split(",")) if item]


def cmd_synth_gen(args, parser) -> int:
    if args.count <= 0:
        parser.error("--count must be a positive integer")
    cfg = SynthConfig(height=args.height, width=args.width, noise=args.noise, seed=args.seed)
    index = write_synthetic_dataset(cfg, args.count, args.out)
    print(f"wrote {len(index)} samples ({cfg.height}x{cfg.width}, seed {cfg.seed}) to {args.out}")
    return 0


def _apply_overrides(cfg: RunConfig, args, parser) -> RunConfig:
    train = cfg.train
    if args.mode:
        train = replace(train, network_mode=args.mode)
    if args.paths:
        names = _split_list(args.paths)
        for name in names:
            try:
                get_pipeline(name)
            except InvalidParameterError as exc:
                parser.error(str(exc))
        train = replace(train, paths=tuple(names))
    if args.unsup_mode or args.tau is not None:
        mode = replace(
            train.unsup_mode,
            tag=args.unsup_mode or train.unsup_mode.tag,
            tau=train.unsup_mode.tau if args.tau is None else args.tau,
        )
        train = replace(train, unsup_mode=mode)
    seed = cfg.seed if args.seed is None else args.seed
    return replace(cfg, seed=seed, train=train)


def _load_split(cfg: RunConfig):
    profile = get_profile(cfg.data.profile)
    index = load_dataset(cfg.data.root, profile)
    labeled, unlabeled = split_labeled_unlabeled(index, cfg.data.labeled_count)
    val = load_dataset(cfg.data.val_root, profile) if cfg.data.val_root else None
    return labeled, unlabeled, val


def cmd_train(args, parser) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args, parser)
    for name in cfg.train.paths:
        get_pipeline(name)  # fail fast, listing the valid presets
    out = _prepare_out(args)
    labeled, unlabeled, val = _load_split(cfg)
    result = run_training(
        labeled, unlabeled, val, cfg.train, cfg.eval, cfg.seed, cfg.data.image_size
    )
    (out / "resolved_config.yaml").write_text(resolved_yaml(cfg))
    _write_csv(out / "losses.csv", result.loss_header, result.loss_rows)
    _write_csv(out / "eval.csv", ["epoch", "model", cfg.eval.metric], result.eval_rows)
    if len(result.nets) == 1:
        mdl.save_checkpoint(out / "checkpoint.tensors", result.nets[0], result.states[0])
    else:
        mdl.save_checkpoint(out / "checkpoint_a.tensors", result.nets[0], result.states[0])
        mdl.save_checkpoint(out / "checkpoint_b.tensors", result.nets[1], result.states[1])
    if result.final_metric is not None:
        print(f"final {cfg.eval.metric}: {result.final_metric:.4f}")
    print(f"run directory: {out}")
    return 0


def cmd_rank_augs(args, parser) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args, parser)
    candidates = _split_list(args.candidates)
    if not candidates:
        parser.error("--candidates must name at least one pipeline")
    for name in candidates:
        try:
            get_pipeline(name)
        except InvalidParameterError as exc:
            parser.error(str(exc))
    if args.epochs:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    out = _prepare_out(args)
    labeled, unlabeled, val = _load_split(cfg)
    if val is None:
        raise InvalidParameterError("rank-augs needs data.val_root for per-epoch ranking")
    ranking, curves = rank_augmentations(
        candidates, labeled, unlabeled, val, cfg.train, cfg.eval, cfg.seed, cfg.data.image_size
    )
    (out / "resolved_config.yaml").write_text(resolved_yaml(cfg))
    _write_csv(out / "ranking.csv", ["rank", "candidate", f"best_{cfg.eval.metric}"], ranking)
    _write_csv(out / "curves.csv", ["candidate", "epoch", cfg.eval.metric], curves)
    for rank, name, value in ranking:
        print(f"{rank}. {name}: {value:.4f}")
    return 0


def cmd_eval(args, parser) -> int:
    paths = _split_list(args.checkpoints)
    if not paths:
        parser.error("--checkpoints must list at least one file")
    nets = []
    for p in paths:
        net, _ = mdl.load_checkpoint(p)
        nets.append(net)
    profile = get_profile(args.profile)
    index = load_dataset(args.dataset, profile)
    out = _prepare_out(args)
    eval_cfg = EvalConfig(metric=args.metric, alpha=args.alpha)
    report = evaluate(nets, index, eval_cfg, (args.height, args.width))
    _write_csv(out / "metrics.csv", ["model", "metric", "value"], [(n, args.metric, v) for n, v in report.rows])
    for name, feats in report.features.items():
        tensorio.save_tensors(out / f"features_{name}.tensors", {"features": feats})
    for name, value in report.rows:
        print(f"{name}: {args.metric}={value:.4f}")
    return 0


def cmd_svd(args, parser) -> int:
    tensors = tensorio.load_tensors(args.features)
    if "features" not in tensors:
        raise InvalidParameterError(f"{args.features}: no 'features' tensor in container")
    out = _prepare_out(args)
    top, entropy, text = analysis.spectrum_report(tensors["features"], top_k=args.top_k)
    (out / "spectrum.csv").write_text(text)
    print(f"{len(top)} singular values, h_nsv={entropy:.6f}")
    return 0


def cmd_validate_combo(args, parser) -> int:
    names = _split_list(args.pipelines)
    if not names:
        parser.error("--pipelines must name at least one pipeline")
    pipelines = []
    for name in names:
        try:
            pipelines.append(get_pipeline(name))
        except InvalidParameterError as exc:
            parser.error(str(exc))
    report = validate_combination(pipelines)
    print(f"verdict: {report.verdict}")
    for v in report.violations:
        print(f"{v.principle}: {v.message}")
    return 0 if report.verdict == "recommended" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poseaug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic stick-figure dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=48)
    p.add_argument("--noise", type=float, default=0.08)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="run consistency training per a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["single", "dual"])
    p.add_argument("--paths")
    p.add_argument("--unsup-mode", dest="unsup_mode", choices=["ml", "cm", "hf", "multi-loss", "confidence-mask", "heatmap-fusion"])
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank-augs", help="train each candidate independently and rank them")
    p.add_argument("--config", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["single"])
    p.add_argument("--paths")
    p.add_argument("--unsup-mode", dest="unsup_mode")
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_rank_augs)

    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset")
    p.add_argument("--checkpoints", required=True, help="comma-separated checkpoint files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--metric", choices=["oks", "pckh", "pck"], default="pck")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--profile", default="synth13")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=48)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("svd", help="singular-value spectrum of a feature dump")
    p.add_argument("--features", required=True)
    p.add_argument("--top-k", dest="top_k", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_svd)

    p = sub.add_parser("validate-combo", help="check pipelines against the combination principles")
    p.add_argument("--pipelines", required=True, help="comma-separated preset names")
    p.set_defaults(func=cmd_validate_combo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except PoseaugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
