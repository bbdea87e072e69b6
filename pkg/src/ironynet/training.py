"""Deterministic training: batching, triplet sampling, Adam, staged schedule.

Training runs in stages: (1) encoders and classifier warm up on plain
cross-entropy with similarity features off, (2) knowledge vectors are
loaded, no gradient steps, (3) full end-to-end training with the requested
ablation flags, early-stopped on validation accuracy. Every source of
randomness derives from the config seed; per-epoch generators use
seed XOR epoch-index so shuffles are reproducible yet distinct, and two
runs with the same config produce byte-identical logs and model files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .encoders import Vocab, apply_text_mask
from .errors import DataError, LabelError, NumericalError
from .model import (
    AblationFlags,
    KnowledgeContext,
    ModelConfig,
    ModelState,
    Sample,
    forward,
    init_model_state,
    softmax_probs,
    total_loss,
)
from .tensor import Tape

log = logging.getLogger(__name__)

STAGE1_FLAGS = AblationFlags(use_knowledge=False, use_semantic=False, use_contrastive=False)


@dataclass
class Dataset:
    samples: list[Sample]
    split: str = "train"

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def label_counts(self) -> dict[int, int]:
        counts = {0: 0, 1: 0}
        for s in self.samples:
            counts[s.label] += 1
        return counts


def load_dataset(path, split: str = "train") -> Dataset:
    """Load a JSON-lines dataset; one object per sample.

    Required fields: id, text, label (0 or 1). Optional: caption,
    image_attrs, image_vec. Duplicate ids within the file are rejected.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset file not found: {path}")
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(rec, dict):
            raise DataError(f"{path}:{lineno}: record is not an object")
        if "id" not in rec or "text" not in rec or "label" not in rec:
            raise DataError(f"{path}:{lineno}: record needs id, text, and label fields")
        try:
            sample = Sample(
                id=str(rec["id"]),
                text=str(rec["text"]),
                caption=str(rec.get("caption", "")),
                image_attrs=[str(a) for a in rec.get("image_attrs") or []],
                image_vec=(
                    np.asarray(rec["image_vec"], dtype=np.float64)
                    if rec.get("image_vec") is not None
                    else None
                ),
                label=rec["label"],
            )
        except LabelError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if sample.id in seen_ids:
            raise DataError(f"{path}:{lineno}: duplicate sample id {sample.id!r}")
        seen_ids.add(sample.id)
        samples.append(sample)
    if not samples:
        raise DataError(f"dataset file {path} holds no samples")
    return Dataset(samples, split=split)


def build_vocab(*datasets: Dataset) -> Vocab:
    """Vocabulary over text, caption, and image-attribute tokens of the datasets."""
    streams = []
    for ds in datasets:
        for s in ds:
            streams.append(s.tokens)
            streams.append(s.caption_tokens)
            streams.append(s.attr_tokens)
    return Vocab.build(streams)


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    macro_f1: float

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
        }


def _safe_div(num: float, den: float) -> float:
    # zero-denominator convention: report 0 rather than NaN
    return num / den if den > 0 else 0.0


def confusion_metrics(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    """Metrics from a confusion matrix; the positive class is ironic (label 1)."""
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    neg_precision = _safe_div(tn, tn + fn)
    neg_recall = _safe_div(tn, tn + fp)
    neg_f1 = _safe_div(2.0 * neg_precision * neg_recall, neg_precision + neg_recall)
    return Metrics(
        accuracy=_safe_div(tp + tn, tp + fp + fn + tn),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=(f1 + neg_f1) / 2.0,
    )


def evaluate(
    dataset: Dataset,
    state: ModelState,
    flags: AblationFlags,
    *,
    knowledge: KnowledgeContext | None = None,
) -> Metrics:
    """Accuracy/precision/recall/F1/macro-F1 over a dataset. No masking here."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    tp = fp = fn = tn = 0
    bs = state.config.batch_size
    for lo in range(0, len(dataset), bs):
        batch = dataset.samples[lo : lo + bs]
        result = forward(batch, state, flags, knowledge=knowledge)
        for sample, logits in zip(batch, result.logits.data):
            probs = softmax_probs(logits)
            pred = 0 if probs[0] >= probs[1] else 1
            if sample.label == 1:
                tp, fn = (tp + 1, fn) if pred == 1 else (tp, fn + 1)
            else:
                tn, fp = (tn + 1, fp) if pred == 0 else (tn, fp + 1)
    return confusion_metrics(tp, fp, fn, tn)


def sample_triplets(
    labels: Sequence[int], rng: np.random.Generator
) -> list[tuple[int, int, int]]:
    """One (anchor, positive, negative) triple per eligible anchor.

    Positives share the anchor's label (never the anchor itself), negatives
    differ; anchors lacking either candidate pool are skipped. Choices are
    uniform draws from the rng stream in anchor order.
    """
    triples = []
    for i, lab in enumerate(labels):
        pos = [j for j, other in enumerate(labels) if other == lab and j != i]
        neg = [j for j, other in enumerate(labels) if other != lab]
        if not pos or not neg:
            continue
        p = pos[int(rng.integers(len(pos)))]
        n = neg[int(rng.integers(len(neg)))]
        triples.append((i, p, n))
    return triples


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place; returns (params, state)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1**t)
        v_hat = state.v[name] / (1.0 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainSettings:
    stage1_epochs: int = 3
    stage3_epochs: int = 30
    patience: int = 5


@dataclass
class TrainResult:
    state: ModelState
    log: list[dict]
    best_val_accuracy: float


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(int(np.uint64(seed) ^ np.uint64(epoch)))


def _run_epoch(
    state: ModelState,
    train_set: Dataset,
    flags: AblationFlags,
    adam: AdamState,
    rng: np.random.Generator,
    *,
    knowledge: KnowledgeContext | None,
    contrastive: bool,
) -> float:
    cfg = state.config
    order = rng.permutation(len(train_set))
    losses = []
    names = list(state.params)
    for lo in range(0, len(order), cfg.batch_size):
        batch = [train_set[int(i)] for i in order[lo : lo + cfg.batch_size]]
        masked = [
            apply_text_mask(state.vocab.encode(s.tokens), cfg.mask_ratio, rng)
            for s in batch
        ]
        labels = [s.label for s in batch]
        triplets = sample_triplets(labels, rng) if contrastive else []
        tape = Tape()
        result = forward(
            batch,
            state,
            flags,
            knowledge=knowledge,
            tape=tape,
            masked_text_ids=masked,
            update_mapping=True,
        )
        loss = total_loss(result.logits, labels, result.embeddings, triplets, cfg, flags)
        handles = result.param_tensors
        grads = dict(zip(names, tape.gradients(loss, [handles[n] for n in names])))
        adam_step(state.params, grads, adam, cfg.learning_rate)
        losses.append(float(loss.data))
    return float(np.mean(losses)) if losses else 0.0


def pretrain_stage1(
    config: ModelConfig,
    train_set: Dataset,
    val_set: Dataset,
    epochs: int,
    *,
    vocab: Vocab | None = None,
) -> tuple[ModelState, list[dict]]:
    """Stage 1: encoder + classifier warm-up, cross-entropy only, fixed epoch count."""
    vocab = vocab or build_vocab(train_set, val_set)
    state = init_model_state(config, vocab, np.random.default_rng(config.seed))
    adam = AdamState.init(state.params)
    entries = []
    for epoch in range(1, epochs + 1):
        rng = _epoch_rng(config.seed, epoch)
        loss = _run_epoch(
            state, train_set, STAGE1_FLAGS, adam, rng, knowledge=None, contrastive=False
        )
        val = evaluate(val_set, state, STAGE1_FLAGS)
        entries.append(
            {"epoch": epoch, "stage": 1, "train_loss": loss, "val": val.as_dict()}
        )
        log.info("stage 1 epoch %d: loss %.4f val acc %.4f", epoch, loss, val.accuracy)
    return state, entries


def train(
    config: ModelConfig,
    train_set: Dataset,
    val_set: Dataset,
    flags: AblationFlags = AblationFlags(),
    *,
    settings: TrainSettings | None = None,
    knowledge: KnowledgeContext | Callable[[], KnowledgeContext | None] | None = None,
    pretrained: tuple[ModelState, list[dict]] | None = None,
) -> TrainResult:
    """Staged training with validation-accuracy early stopping.

    ``knowledge`` may be a loaded context or a zero-argument loader invoked
    at stage 2, after the warm-up. ``pretrained`` injects a shared stage-1
    snapshot (plus its log) so ablation variants start from identical
    weights; the snapshot is copied, never mutated.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training needs nonempty train and validation sets")
    counts = train_set.label_counts
    if counts[0] == 0 or counts[1] == 0:
        log.warning(
            "training set holds a single class (%s); triplet sampling will be empty",
            counts,
        )
    settings = settings or TrainSettings()
    config.validate()

    # Stage 1: warm-up (or reuse a shared snapshot)
    if pretrained is not None:
        base_state, entries = pretrained[0].copy(), list(pretrained[1])
    else:
        base_state, entries = pretrain_stage1(
            config, train_set, val_set, settings.stage1_epochs
        )

    # Stage 2: knowledge vectors become available; no gradient steps
    context = knowledge() if callable(knowledge) else knowledge
    if flags.use_semantic and flags.use_knowledge and context is None:
        from .errors import ConfigError

        raise ConfigError("use_knowledge requires concept tables (knowledge loader)")

    # Stage 3: end-to-end with the requested flags
    state = base_state
    adam = AdamState.init(state.params)
    contrastive = flags.use_contrastive and config.lambda_ > 0.0
    best_state = state.copy()
    best_acc = -1.0
    stale = 0
    epoch0 = settings.stage1_epochs
    for epoch in range(epoch0 + 1, epoch0 + settings.stage3_epochs + 1):
        rng = _epoch_rng(config.seed, epoch)
        loss = _run_epoch(
            state,
            train_set,
            flags,
            adam,
            rng,
            knowledge=context,
            contrastive=contrastive,
        )
        val = evaluate(val_set, state, flags, knowledge=context)
        entries.append(
            {"epoch": epoch, "stage": 3, "train_loss": loss, "val": val.as_dict()}
        )
        log.info("stage 3 epoch %d: loss %.4f val acc %.4f", epoch, loss, val.accuracy)
        if val.accuracy > best_acc:
            best_acc = val.accuracy
            best_state = state.copy()
            stale = 0
        else:
            stale += 1
            if stale > settings.patience:
                break
    return TrainResult(state=best_state, log=entries, best_val_accuracy=best_acc)


def write_epoch_log(entries: list[dict], path) -> None:
    """JSON-lines epoch log; deterministic bytes for identical runs."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
