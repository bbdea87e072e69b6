"""Command implementations shared by the FastAPI service and the CLI.

Each operation takes plain paths/values and returns JSON-ready dicts, so the
service layer only adds schemas and HTTP, and the CLI only adds argument
parsing and exit codes. All outputs are deterministic functions of the
inputs: rerunning a command with identical inputs reproduces identical
bytes, which is what makes golden-file testing possible.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config, require_paths
from .errors import ConfigError, DataError, FormatError
from .knowledge import ConceptCache, load_edges, load_numberbatch
from .model import (
    ABLATION_VARIANTS,
    AblationFlags,
    KnowledgeContext,
    ModelState,
    Sample,
    predict,
)
from .model_io import load_model, save_model
from .training import (
    Dataset,
    TrainSettings,
    evaluate,
    load_dataset,
    pretrain_stage1,
    train,
    write_epoch_log,
)

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("accuracy", "f1", "macro_f1")
VARIANT_ORDER = ("full", "no_knowledge", "no_semantic", "no_contrastive")


def run_knowledge_build(
    numberbatch_path, edges_path, vocab_path, out_path, *, k=5, relations=None, dim=300
) -> dict:
    """Build and persist the per-word concept cache; deterministic bytes."""
    for p, what in ((numberbatch_path, "numberbatch"), (edges_path, "edges"), (vocab_path, "vocab")):
        if not Path(p).exists():
            raise ConfigError(f"{what} file not found: {p}")
    table = load_numberbatch(numberbatch_path, expected_dim=dim)
    edges = load_edges(edges_path)
    words = [w.strip() for w in Path(vocab_path).read_text(encoding="utf-8").splitlines() if w.strip()]
    cache = ConceptCache.build(words, table, edges, k=k, relation_filter=relations)
    cache.save(out_path)
    return {"words": len(cache), "out": str(out_path)}


def _knowledge_loader(cfg: RunConfig):
    """A memoizing stage-2 loader callable, or None when no source is configured."""
    if cfg.concepts_path:

        def inner():
            if not Path(cfg.concepts_path).exists():
                raise ConfigError(f"knowledge.concepts: file not found: {cfg.concepts_path}")
            return KnowledgeContext(ConceptCache.load(cfg.concepts_path))

    elif cfg.numberbatch_path and cfg.edges_path:

        def inner():
            require_paths(cfg, "numberbatch_path", "edges_path")
            table = load_numberbatch(cfg.numberbatch_path, expected_dim=cfg.model.concept_dim)
            edges = load_edges(cfg.edges_path)
            words = set()
            for path in (cfg.train_path, cfg.val_path):
                if path:
                    for s in load_dataset(path):
                        words.update(s.tokens)
                        words.update(s.attr_tokens)
            cache = ConceptCache.build(
                sorted(words), table, edges, k=cfg.model.concept_k, relation_filter=cfg.model.relations
            )
            return KnowledgeContext(cache)

    else:
        return None

    holder: dict = {}

    def memoized():
        if "ctx" not in holder:
            holder["ctx"] = inner()
        return holder["ctx"]

    return memoized


def _train_variant(cfg: RunConfig, flags: AblationFlags, loader, pretrained, train_set, val_set):
    settings = TrainSettings(
        stage1_epochs=cfg.stage1_epochs,
        stage3_epochs=cfg.stage3_epochs,
        patience=cfg.patience,
    )
    if flags.use_semantic and flags.use_knowledge and loader is None:
        raise ConfigError(
            "flags.use_knowledge needs knowledge.concepts or numberbatch+edges in the config"
        )
    return train(
        cfg.model,
        train_set,
        val_set,
        flags,
        settings=settings,
        knowledge=loader if flags.use_semantic else None,
        pretrained=pretrained,
    )


def run_train(config_path, seed: int | None = None) -> dict:
    """Train per config; write the model file and epoch log; return final metrics."""
    cfg = load_run_config(config_path, seed_override=seed)
    require_paths(cfg, "train_path", "val_path")
    if not cfg.model_out or not cfg.log_out:
        raise ConfigError("config keys out.model and out.log are required for train")
    train_set = load_dataset(cfg.train_path, "train")
    val_set = load_dataset(cfg.val_path, "val")

    loader = _knowledge_loader(cfg)
    result = _train_variant(cfg, cfg.flags, loader, train_set, val_set)
    context = loader() if (loader and cfg.flags.use_semantic and cfg.flags.use_knowledge) else None
    final = evaluate(val_set, result.state, cfg.flags, knowledge=context)

    save_model(result.state, cfg.model_out)
    write_epoch_log(result.log, cfg.log_out)
    return {
        "metrics": final.as_dict(),
        "model": str(cfg.model_out),
        "log": str(cfg.log_out),
        "epochs": len(result.log),
    }


def _eval_flags(state: ModelState, knowledge_available: bool) -> AblationFlags:
    """Workable evaluation flags for a standalone model file."""
    semantic = state.mapping.fit_count >= 1
    return AblationFlags(
        use_knowledge=semantic and knowledge_available,
        use_semantic=semantic,
        use_contrastive=True,
    )


def run_eval(model_path, data_path, concepts_path=None) -> dict:
    """Evaluate a saved model on a dataset; returns the metrics dict."""
    if not Path(model_path).exists():
        raise ConfigError(f"model file not found: {model_path}")
    state = load_model(model_path)
    dataset = load_dataset(data_path, "eval")
    context = None
    if concepts_path:
        if not Path(concepts_path).exists():
            raise ConfigError(f"concepts file not found: {concepts_path}")
        context = KnowledgeContext(ConceptCache.load(concepts_path))
    flags = _eval_flags(state, context is not None)
    metrics = evaluate(dataset, state, flags, knowledge=context)
    return metrics.as_dict()


def run_ablate(config_path, seed: int | None = None) -> dict:
    """Train the full model plus the three ablations and report deltas.

    All variants share one stage-1 warm-up (identical seeds and weights), so
    the deltas isolate the ablated component. Variants are scored on the
    held-out split (data.test when configured, else data.val). A failed
    variant is reported in its row and does not abort the others.
    """
    cfg = load_run_config(config_path, seed_override=seed)
    require_paths(cfg, "train_path", "val_path")
    train_set = load_dataset(cfg.train_path, "train")
    val_set = load_dataset(cfg.val_path, "val")
    if cfg.test_path:
        require_paths(cfg, "test_path")
        held_out = load_dataset(cfg.test_path, "test")
        held_out_name = "test"
    else:
        held_out = val_set
        held_out_name = "val"

    pretrained = pretrain_stage1(
        cfg.model, train_set, val_set, cfg.stage1_epochs
    )

    loader = _knowledge_loader(cfg)
    rows = []
    scores: dict[str, dict] = {}
    for name in VARIANT_ORDER:
        flags = ABLATION_VARIANTS[name]
        try:
            result = _train_variant(cfg, flags, loader, pretrained, train_set, val_set)
            context = (
                loader() if (loader and flags.use_semantic and flags.use_knowledge) else None
            )
            metrics = evaluate(held_out, result.state, flags, knowledge=context)
            scores[name] = metrics.as_dict()
            rows.append(
                {
                    "variant": name,
                    **{c: scores[name][c] for c in REPORT_COLUMNS},
                    "val_accuracy": result.best_val_accuracy,
                    "epochs": [e for e in result.log if e["stage"] == 3][-1]["epoch"]
                    if result.log
                    else 0,
                    "log": result.log,
                }
            )
        except Exception as exc:  # a failed variant must not sink the sweep
            log.warning("variant %s failed: %s", name, exc)
            rows.append({"variant": name, "error": f"{type(exc).__name__}: {exc}"})

    full = scores.get("full")
    for row in rows:
        if "error" in row:
            continue
        for c in REPORT_COLUMNS:
            row[f"delta_{c}"] = row[c] - full[c] if full else 0.0

    report = {"held_out": held_out_name, "seed": cfg.model.seed, "rows": rows}
    if cfg.report_out:
        Path(cfg.report_out).write_text(
            json.dumps(report, sort_keys=True) + "\n", encoding="utf-8"
        )
        report["out"] = str(cfg.report_out)
    return report


def render_report(report: dict) -> str:
    """Fixed-width ablation table; a pure function of the report dict."""
    header = (
        f"{'variant':16s} {'accuracy':>9s} {'f1':>9s} {'macro_f1':>9s}"
        f" {'d_acc':>8s} {'d_f1':>8s} {'d_macro':>8s}"
    )
    lines = [header]
    for row in report["rows"]:
        if "error" in row:
            lines.append(f"{row['variant']:16s} FAILED: {row['error']}")
            continue
        lines.append(
            f"{row['variant']:16s} {row['accuracy']:9.4f} {row['f1']:9.4f} {row['macro_f1']:9.4f}"
            f" {row['delta_accuracy']:8.4f} {row['delta_f1']:8.4f} {row['delta_macro_f1']:8.4f}"
        )
    return "\n".join(lines)


def run_report(report_path) -> dict:
    """Reload a saved ablation report for re-rendering."""
    p = Path(report_path)
    if not p.exists():
        raise ConfigError(f"report file not found: {report_path}")
    try:
        report = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{report_path}: invalid JSON: {exc}") from exc
    if not isinstance(report, dict) or "rows" not in report:
        raise FormatError(f"{report_path}: not an ablation report")
    return report


_MODEL_CACHE: dict[str, ModelState] = {}


def _cached_model(model_path) -> ModelState:
    key = str(Path(model_path).resolve())
    if key not in _MODEL_CACHE:
        if not Path(model_path).exists():
            raise ConfigError(f"model file not found: {model_path}")
        _MODEL_CACHE[key] = load_model(model_path)
    return _MODEL_CACHE[key]


def run_predict(
    model_path,
    text: str,
    caption: str = "",
    image_attrs: list[str] | None = None,
    image_vec: list[float] | None = None,
    concepts_path=None,
) -> dict:
    """Classify one post with a saved model."""
    state = _cached_model(model_path)
    context = None
    if concepts_path:
        if not Path(concepts_path).exists():
            raise ConfigError(f"concepts file not found: {concepts_path}")
        context = KnowledgeContext(ConceptCache.load(concepts_path))
    flags = _eval_flags(state, context is not None)
    sample = Sample(
        id="request",
        text=text,
        caption=caption,
        image_attrs=image_attrs or [],
        image_vec=np.asarray(image_vec, dtype=np.float64) if image_vec is not None else None,
        label=0,
    )
    label, probability = predict(sample, state, flags, knowledge=context)
    return {
        "label": label,
        "ironic": bool(label == 1),
        "probability": probability,
    }
