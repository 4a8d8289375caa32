"""Run configuration: a YAML document with data/train/eval/analysis sections.

Unknown keys are rejected rather than ignored, and every command writes the
fully resolved configuration next to its outputs so a run directory is
self-describing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .errors import InvalidParameterError
from .ssltrain import EvalConfig, TrainConfig, UnsupMode

__all__ = ["DataConfig", "AnalysisConfig", "RunConfig", "load_run_config", "resolved_yaml"]


@dataclass(frozen=True)
class DataConfig:
    profile: str = "synth13"
    root: str = ""
    val_root: str = ""
    labeled_count: int = 100
    image_height: int = 64
    image_width: int = 48

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)


@dataclass(frozen=True)
class AnalysisConfig:
    top_k: int = 50


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)


_TRAIN_KEYS = {
    "mode", "paths", "unsup_mode", "tau", "lambda_u", "epochs", "batch_size",
    "lr_schedule", "warmup_frac", "sigma", "joint_confidence",
}
_DATA_KEYS = {"profile", "root", "val_root", "labeled_count", "image_height", "image_width"}
_EVAL_KEYS = {"metric", "alpha"}
_ANALYSIS_KEYS = {"top_k"}
_TOP_KEYS = {"seed", "data", "train", "eval", "analysis"}


def _check_keys(section: str, mapping: dict, allowed: set[str]) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise InvalidParameterError(
            f"unknown {section} config keys: {sorted(unknown)}; allowed: {sorted(allowed)}"
        )


def _train_config(raw: dict, fisheye: bool) -> TrainConfig:
    _check_keys("train", raw, _TRAIN_KEYS)
    kwargs = {}
    if "mode" in raw:
        kwargs["network_mode"] = raw["mode"]
    if "paths" in raw:
        paths = raw["paths"]
        kwargs["paths"] = tuple(paths.split(",")) if isinstance(paths, str) else tuple(paths)
    mode_tag = raw.get("unsup_mode", "multi-loss")
    kwargs["unsup_mode"] = UnsupMode(mode_tag, float(raw.get("tau", 0.5)))
    for key in ("lambda_u", "epochs", "batch_size", "warmup_frac", "sigma", "joint_confidence"):
        if key in raw:
            kwargs[key] = raw[key]
    if "lr_schedule" in raw:
        kwargs["lr_schedule"] = tuple((int(e), float(r)) for e, r in raw["lr_schedule"])
    return TrainConfig(fisheye=fisheye, **kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise InvalidParameterError(f"{path}: config must be a mapping")
    _check_keys("top-level", raw, _TOP_KEYS)
    data_raw = raw.get("data", {}) or {}
    _check_keys("data", data_raw, _DATA_KEYS)
    data = DataConfig(**data_raw)
    fisheye = data.profile == "fisheye-body"
    train = _train_config(raw.get("train", {}) or {}, fisheye)
    eval_raw = raw.get("eval", {}) or {}
    _check_keys("eval", eval_raw, _EVAL_KEYS)
    eval_cfg = EvalConfig(**eval_raw)
    analysis_raw = raw.get("analysis", {}) or {}
    _check_keys("analysis", analysis_raw, _ANALYSIS_KEYS)
    analysis = AnalysisConfig(**analysis_raw)
    return RunConfig(seed=int(raw.get("seed", 0)), data=data, train=train, eval=eval_cfg, analysis=analysis)


def resolved_yaml(cfg: RunConfig) -> str:
    """Render the fully resolved configuration back to YAML."""
    doc = {
        "seed": cfg.seed,
        "data": asdict(cfg.data),
        "train": {
            "mode": cfg.train.network_mode,
            "paths": list(cfg.train.paths),
            "unsup_mode": cfg.train.unsup_mode.tag,
            "tau": cfg.train.unsup_mode.tau,
            "lambda_u": cfg.train.lambda_u,
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "lr_schedule": [list(pair) for pair in cfg.train.lr_schedule],
            "warmup_frac": cfg.train.warmup_frac,
            "sigma": cfg.train.sigma,
            "joint_confidence": cfg.train.joint_confidence,
        },
        "eval": {"metric": cfg.eval.metric, "alpha": cfg.eval.alpha},
        "analysis": {"top_k": cfg.analysis.top_k},
    }
    return yaml.safe_dump(doc, sort_keys=True)
