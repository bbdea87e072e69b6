"""Run configuration: flat dotted-key JSON shared by CLI and service.

One format covers data paths, model hyperparameters, training settings, and
output locations. Keys are validated against a registry so typos fail fast,
and the registry doubles as the CLI help text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .errors import ConfigError, DataError
from .knowledge import DEFAULT_RELATIONS
from .model import AblationFlags, ModelConfig

# key -> (default, description); None default means optional/unset
CONFIG_KEYS: dict[str, tuple[object, str]] = {
    "model.hidden_dim": (64, "encoder output width d_h (full-scale setups use 768)"),
    "model.embed_dim": (64, "token embedding width"),
    "model.shared_dim": (64, "shared-space width d_s for sample-level similarity"),
    "model.fused_dim": (64, "fused/contrastive embedding width d_f"),
    "model.concept_dim": (300, "concept vector dimension"),
    "model.max_len": (128, "token truncation length"),
    "model.lambda": (0.1, "contrastive loss weight"),
    "model.margin": (0.5, "triplet hinge margin"),
    "model.learning_rate": (1e-5, "Adam learning rate"),
    "model.batch_size": (32, "training batch size"),
    "model.mask_ratio": (0.15, "training-time text mask ratio"),
    "model.concept_k": (5, "related concepts per word"),
    "model.relations": (list(DEFAULT_RELATIONS), "relation labels kept during expansion"),
    "model.momentum": (0.9, "running-statistics momentum for the mapping"),
    "model.eps": (1e-5, "covariance ridge for the whitening mapping"),
    "model.seed": (0, "rng seed for init, shuffling, masking, triplets"),
    "model.image_feature_dim": (None, "declared dim of precomputed image vectors"),
    "model.augmentations": (
        ["random_crop", "horizontal_flip", "normalize"],
        "image augmentation flags (metadata only; raw images are not processed)",
    ),
    "data.train": (None, "training split, JSON lines"),
    "data.val": (None, "validation split, JSON lines"),
    "data.test": (None, "held-out split, JSON lines"),
    "knowledge.numberbatch": (None, "word vector file"),
    "knowledge.edges": (None, "concept edge dump, CSV"),
    "knowledge.concepts": (None, "prebuilt concept cache (knowledge-build output)"),
    "knowledge.vocab": (None, "word list for knowledge-build, one per line"),
    "conceptnet.endpoint": ("https://api.conceptnet.io", "REST API base URL"),
    "conceptnet.timeout_ms": (5000, "REST API timeout"),
    "conceptnet.cache_dir": (None, "directory for cached API responses"),
    "train.stage1_epochs": (3, "encoder warm-up epochs"),
    "train.stage3_epochs": (30, "end-to-end epoch budget"),
    "train.patience": (5, "early-stopping patience on validation accuracy"),
    "flags.use_knowledge": (True, "enable concept-derived word-level features"),
    "flags.use_semantic": (True, "enable both similarity levels"),
    "flags.use_contrastive": (True, "enable the triplet loss term"),
    "out.model": (None, "trained model file"),
    "out.log": (None, "epoch log, JSON lines"),
    "out.report": (None, "ablation report JSON"),
}

_MODEL_FIELD_BY_KEY = {
    "model.lambda": "lambda_",
    "model.relations": "relations",
    "model.augmentations": "augmentations",
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    train_path: str | None = None
    val_path: str | None = None
    test_path: str | None = None
    numberbatch_path: str | None = None
    edges_path: str | None = None
    concepts_path: str | None = None
    vocab_path: str | None = None
    conceptnet_endpoint: str = "https://api.conceptnet.io"
    conceptnet_timeout_ms: int = 5000
    conceptnet_cache_dir: str | None = None
    stage1_epochs: int = 3
    stage3_epochs: int = 30
    patience: int = 5
    model_out: str | None = None
    log_out: str | None = None
    report_out: str | None = None


_SIMPLE_ASSIGN = {
    "data.train": "train_path",
    "data.val": "val_path",
    "data.test": "test_path",
    "knowledge.numberbatch": "numberbatch_path",
    "knowledge.edges": "edges_path",
    "knowledge.concepts": "concepts_path",
    "knowledge.vocab": "vocab_path",
    "conceptnet.endpoint": "conceptnet_endpoint",
    "conceptnet.timeout_ms": "conceptnet_timeout_ms",
    "conceptnet.cache_dir": "conceptnet_cache_dir",
    "train.stage1_epochs": "stage1_epochs",
    "train.stage3_epochs": "stage3_epochs",
    "train.patience": "patience",
    "out.model": "model_out",
    "out.log": "log_out",
    "out.report": "report_out",
}


def config_from_dict(doc: dict, seed_override: int | None = None) -> RunConfig:
    """Build a RunConfig from flat dotted keys, rejecting unknown ones."""
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    model_kwargs = {}
    model_field_names = {f.name for f in dc_fields(ModelConfig)}
    flags_kwargs = {}
    cfg = RunConfig()
    for key, value in doc.items():
        if key.startswith("model."):
            name = _MODEL_FIELD_BY_KEY.get(key, key.split(".", 1)[1])
            if name not in model_field_names:
                raise ConfigError(f"unknown model config key: {key}")
            if isinstance(value, list):
                value = tuple(value)
            model_kwargs[name] = value
        elif key.startswith("flags."):
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be a boolean, got {value!r}")
            flags_kwargs[key.split(".", 1)[1]] = value
        else:
            setattr(cfg, _SIMPLE_ASSIGN[key], value)
    if seed_override is not None:
        model_kwargs["seed"] = int(seed_override)
    try:
        cfg.model = ModelConfig(**model_kwargs).validate()
        cfg.flags = AblationFlags(**flags_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(doc, seed_override)


def require_paths(cfg: RunConfig, *names: str) -> None:
    """Validate that the named config paths are set and exist.

    Dataset paths raise DataError when missing (exit 3); everything else is
    a ConfigError (exit 2).
    """
    datasets = {"train_path", "val_path", "test_path"}
    for name in names:
        value = getattr(cfg, name)
        key = {v: k for k, v in _SIMPLE_ASSIGN.items()}.get(name, name)
        if value is None:
            if name in datasets:
                raise DataError(f"config key {key} is required but unset")
            raise ConfigError(f"config key {key} is required but unset")
        if not Path(value).exists():
            if name in datasets:
                raise DataError(f"{key}: file not found: {value}")
            raise ConfigError(f"{key}: file not found: {value}")


def config_help_text() -> str:
    lines = ["config keys (JSON object with flat dotted keys):"]
    for key, (default, desc) in CONFIG_KEYS.items():
        lines.append(f"  {key:28s} default={json.dumps(default)}  {desc}")
    return "\n".join(lines)
