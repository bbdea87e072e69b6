"""The full irony classifier: encoders + knowledge + similarity + losses.

Per sample the model encodes text, caption, and image into d_h vectors,
derives the three similarity scores, fuses everything (with |t - v| and
t * v interaction terms) into a d_f vector, and classifies with a two-layer
head. The L2-normalized fused projection doubles as the contrastive
embedding, so euclidean distances live in [0, 2] and the hinge margin is
meaningfully scaled. Ablation flags zero out feature groups without
changing any shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .encoders import (
    EncoderParams,
    ImagePathParams,
    Vocab,
    _pooled_embedding,
    encode_token_batch,
    tokenize,
)
from .errors import ConfigError, DataError, FeatureDimError, LabelError
from .knowledge import (
    DEFAULT_CONCEPT_DIM,
    DEFAULT_CONCEPT_K,
    DEFAULT_RELATIONS,
    STOPWORDS,
    ConceptCache,
)
from .similarity import (
    MappingState,
    SampleProjection,
    SimilarityFeatures,
    fit_mapping,
    sample_similarity_batch,
    word_level_similarity,
)
from .tensor import (
    Tape,
    Tensor,
    absolute,
    concat,
    euclidean_distance,
    gather_rows,
    l2_normalize,
    matmul,
    mean,
    relu,
    reshape,
    row_euclidean,
    softmax_cross_entropy,
    stack,
)

N_SIM_FEATURES = 3


@dataclass
class ModelConfig:
    """Hyperparameters; defaults fit desk-scale runs, full-scale values noted in docs."""

    hidden_dim: int = 64
    embed_dim: int = 64
    shared_dim: int = 64
    fused_dim: int = 64
    concept_dim: int = DEFAULT_CONCEPT_DIM
    max_len: int = 128
    lambda_: float = 0.1
    margin: float = 0.5
    learning_rate: float = 1e-5
    batch_size: int = 32
    mask_ratio: float = 0.15
    concept_k: int = DEFAULT_CONCEPT_K
    relations: tuple[str, ...] = DEFAULT_RELATIONS
    momentum: float = 0.9
    eps: float = 1e-5
    seed: int = 0
    image_feature_dim: int | None = None
    # Inert metadata: raw-image augmentation is out of scope, the flags are
    # recorded so configs carry the intended preprocessing.
    augmentations: tuple[str, ...] = ("random_crop", "horizontal_flip", "normalize")

    def validate(self) -> "ModelConfig":
        for name in ("hidden_dim", "embed_dim", "shared_dim", "fused_dim", "concept_dim", "max_len", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lambda_ < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lambda_}")
        if self.margin <= 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if not 0.0 < self.momentum <= 1.0:
            raise ConfigError(f"momentum must lie in (0, 1], got {self.momentum}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.concept_k < 0:
            raise ConfigError(f"concept_k must be nonnegative, got {self.concept_k}")
        return self


@dataclass(frozen=True)
class AblationFlags:
    """Component switches. Disabling semantics disables both similarity levels;
    disabling knowledge zeroes only the concept-derived word-level scores."""

    use_knowledge: bool = True
    use_semantic: bool = True
    use_contrastive: bool = True


FULL = AblationFlags()
ABLATION_VARIANTS = {
    "full": FULL,
    "no_knowledge": replace(FULL, use_knowledge=False),
    "no_semantic": replace(FULL, use_semantic=False),
    "no_contrastive": replace(FULL, use_contrastive=False),
}


@dataclass
class Sample:
    """One labeled image-text post."""

    id: str
    text: str
    caption: str = ""
    image_attrs: list[str] = field(default_factory=list)
    image_vec: np.ndarray | None = None
    label: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise LabelError(f"sample {self.id!r}: label must be 0 or 1, got {self.label}")
        if self.image_vec is not None:
            self.image_vec = np.asarray(self.image_vec, dtype=np.float64)
        self.tokens = tokenize(self.text)
        self.caption_tokens = tokenize(self.caption)
        self.attr_tokens = [t for a in self.image_attrs for t in tokenize(a)]


class KnowledgeContext:
    """Concept matrices per word list, backed by a built concept cache."""

    def __init__(self, cache: ConceptCache):
        self.cache = cache
        self._memo: dict[tuple[str, ...], tuple[np.ndarray, bool]] = {}

    def concept_matrix(self, words: Sequence[str]) -> tuple[np.ndarray, bool]:
        """Stacked concept vectors for the non-stopword entries of ``words``.

        Words missing from the cache contribute nothing; if nothing remains
        the result is a single zero row flagged OOV.
        """
        key = tuple(words)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        blocks = []
        for word in words:
            if word in STOPWORDS:
                continue
            cs = self.cache.get(word)
            if cs is not None and cs.vectors is not None and not cs.oov:
                blocks.append(cs.vectors)
        if blocks:
            result = np.concatenate(blocks, axis=0), False
        else:
            result = np.zeros((1, self.cache.dim)), True
        self._memo[key] = result
        return result


@dataclass
class ModelState:
    """Everything trainable plus the statistics needed to run inference."""

    config: ModelConfig
    vocab: Vocab
    params: dict[str, np.ndarray]
    mapping: MappingState
    version: int = 1

    def copy(self) -> "ModelState":
        return ModelState(
            config=self.config,
            vocab=self.vocab,
            params={k: v.copy() for k, v in self.params.items()},
            mapping=self.mapping.copy(),
            version=self.version,
        )

    def text_params(self, prefix: str) -> EncoderParams:
        p = self.params
        return EncoderParams(p[f"{prefix}.embedding"], p[f"{prefix}.proj_w"], p[f"{prefix}.proj_b"])

    def image_params(self) -> ImagePathParams:
        p = self.params
        return ImagePathParams(
            attrs=self.text_params("image"),
            pre_w=p.get("image.pre_w"),
            pre_b=p.get("image.pre_b"),
        )

    def sample_projection(self) -> SampleProjection:
        p = self.params
        return SampleProjection(p["sim.text_w"], p["sim.text_b"], p["sim.image_w"], p["sim.image_b"])


def fused_input_dim(config: ModelConfig) -> int:
    return 5 * config.hidden_dim + N_SIM_FEATURES


def init_model_state(config: ModelConfig, vocab: Vocab, rng: np.random.Generator) -> ModelState:
    """Fresh parameters with deterministic shapes and initialization order."""
    config.validate()
    d_e, d_h, d_s, d_f = config.embed_dim, config.hidden_dim, config.shared_dim, config.fused_dim
    n_vocab = len(vocab)

    def dense(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)

    params: dict[str, np.ndarray] = {}
    for prefix in ("text", "caption", "image"):
        params[f"{prefix}.embedding"] = 0.5 * rng.standard_normal((n_vocab, d_e))
        params[f"{prefix}.proj_w"] = dense(d_e, d_h)
        params[f"{prefix}.proj_b"] = 0.01 * np.ones(d_h)
    if config.image_feature_dim is not None:
        params["image.pre_w"] = dense(config.image_feature_dim, d_h)
        params["image.pre_b"] = 0.01 * np.ones(d_h)
    params["sim.text_w"] = dense(2 * d_h, d_s)
    params["sim.text_b"] = np.zeros(d_s)
    params["sim.image_w"] = dense(d_h, d_s)
    params["sim.image_b"] = np.zeros(d_s)
    params["fuse.w"] = dense(fused_input_dim(config), d_f)
    params["fuse.b"] = np.zeros(d_f)
    params["head.w1"] = dense(d_f, d_f)
    params["head.b1"] = 0.01 * np.ones(d_f)
    params["head.w2"] = dense(d_f, 2)
    params["head.b2"] = np.zeros(2)

    mapping = MappingState(dim=2 * d_s, momentum=config.momentum, eps=config.eps)
    return ModelState(config=config, vocab=vocab, params=params, mapping=mapping)


@dataclass
class ForwardResult:
    logits: Tensor  # (n, 2)
    embeddings: Tensor  # (n, d_f), L2-normalized contrastive embeddings
    similarities: list[SimilarityFeatures]
    # tensor handles for the parameters this pass was recorded with; needed
    # to pull gradients off the tape (None for untaped inference passes)
    param_tensors: dict[str, Tensor] | None = None


def _encode_image_batch(batch, state: ModelState, taped: dict[str, Tensor], tape):
    """Per-sample image encoding supporting mixed attribute/precomputed inputs."""
    emb = taped["image.embedding"]
    w, b = taped["image.proj_w"], taped["image.proj_b"]
    rows = []
    for s in batch:
        if s.image_vec is not None:
            pw = taped.get("image.pre_w")
            pb = taped.get("image.pre_b")
            if pw is None or pb is None:
                raise ConfigError(
                    f"sample {s.id!r} carries a precomputed image vector but the "
                    "model has no image_feature_dim configured"
                )
            if s.image_vec.shape != (pw.data.shape[0],):
                raise FeatureDimError(
                    f"sample {s.id!r}: image vector has shape {s.image_vec.shape}, "
                    f"expected ({pw.data.shape[0]},)"
                )
            rows.append(relu(matmul(Tensor(s.image_vec), pw) + pb))
        else:
            ids = state.vocab.encode(s.attr_tokens)
            if not ids:
                raise DataError(f"sample {s.id!r} has neither image attributes nor an image vector")
            pooled = _pooled_embedding(ids[: state.config.max_len], emb, allow_empty=False)
            rows.append(relu(matmul(pooled, w) + b))
    return stack(rows)


def forward(
    batch: Sequence[Sample],
    state: ModelState,
    flags: AblationFlags = FULL,
    *,
    knowledge: KnowledgeContext | None = None,
    tape: Tape | None = None,
    masked_text_ids: Sequence[Sequence[int]] | None = None,
    update_mapping: bool = False,
    params_override: dict[str, Tensor] | None = None,
) -> ForwardResult:
    """Run the classifier over a batch.

    ``masked_text_ids`` lets the trainer substitute masked token ids for the
    text path; evaluation paths leave it None so the raw tokens are used.
    With ``update_mapping`` (training only) the running statistics are
    refitted from the current batch before the shared-space cosine, and the
    refreshed state is written back to ``state.mapping``; gradients never
    flow through the statistics. ``params_override`` substitutes caller-held
    parameter tensors (the gradient checker uses this so the analytic and
    probe passes run through the identical code path).
    """
    if not batch:
        raise DataError("forward needs a nonempty batch")
    cfg = state.config
    if flags.use_semantic and flags.use_knowledge and knowledge is None:
        raise ConfigError("use_knowledge requires loaded concept tables")

    if params_override is not None:
        taped = params_override
    else:
        taped = {name: Tensor(arr, tape) for name, arr in state.params.items()}
    text_enc = EncoderParams(taped["text.embedding"], taped["text.proj_w"], taped["text.proj_b"])
    cap_enc = EncoderParams(taped["caption.embedding"], taped["caption.proj_w"], taped["caption.proj_b"])

    if masked_text_ids is None:
        text_ids = [state.vocab.encode(s.tokens) for s in batch]
    else:
        if len(masked_text_ids) != len(batch):
            raise ValueError("masked_text_ids must match the batch length")
        text_ids = [list(ids) for ids in masked_text_ids]
    for s, ids in zip(batch, text_ids):
        if not ids:
            raise DataError(f"sample {s.id!r} has no text tokens")
    cap_ids = [state.vocab.encode(s.caption_tokens) for s in batch]

    t = encode_token_batch(text_ids, text_enc, max_len=cfg.max_len, tape=tape)
    c = encode_token_batch(cap_ids, cap_enc, max_len=cfg.max_len, tape=tape, allow_empty=True)
    v = _encode_image_batch(batch, state, taped, tape)

    n = len(batch)
    word_scores = np.zeros((n, 2))
    sims_meta = [SimilarityFeatures() for _ in range(n)]
    if flags.use_semantic:
        if flags.use_knowledge:
            for i, s in enumerate(batch):
                t_mat, t_oov = knowledge.concept_matrix(tuple(s.tokens))
                v_mat, v_oov = knowledge.concept_matrix(tuple(s.attr_tokens))
                w_max, w_mean, oov = word_level_similarity(t_mat, v_mat)
                word_scores[i] = (w_max, w_mean)
                sims_meta[i].word_max = w_max
                sims_meta[i].word_mean = w_mean
                sims_meta[i].word_oov = oov or t_oov or v_oov
        proj = SampleProjection(
            taped["sim.text_w"], taped["sim.text_b"], taped["sim.image_w"], taped["sim.image_b"]
        )
        if update_mapping and not state.mapping.frozen and n >= 2:
            z_preview = _shared_input(t.data, c.data, v.data, state)
            state.mapping = fit_mapping(z_preview, state.mapping)
        sample_scores, zero_mask = sample_similarity_batch(t, c, v, proj, state.mapping, tape=tape)
        for i in range(n):
            sims_meta[i].sample = float(np.clip(sample_scores.data[i], -1.0, 1.0))
            sims_meta[i].sample_zero = bool(zero_mask[i])
        sim_block = concat(
            [Tensor(word_scores), reshape(sample_scores, (n, 1))], axis=1
        )
    else:
        sim_block = Tensor(np.zeros((n, N_SIM_FEATURES)))

    fused_in = concat([t, c, v, absolute(t - v), t * v, sim_block], axis=1)
    fused = matmul(fused_in, taped["fuse.w"]) + taped["fuse.b"]
    embeddings = l2_normalize(fused)
    hidden = relu(matmul(fused, taped["head.w1"]) + taped["head.b1"])
    logits = matmul(hidden, taped["head.w2"]) + taped["head.b2"]
    return ForwardResult(
        logits=logits,
        embeddings=embeddings,
        similarities=sims_meta,
        param_tensors=taped if tape is not None else None,
    )


def _shared_input(t: np.ndarray, c: np.ndarray, v: np.ndarray, state: ModelState) -> np.ndarray:
    """The concatenated shared-space projection, as plain data for statistics."""
    p = state.params
    u = np.concatenate([t, c], axis=1) @ p["sim.text_w"] + p["sim.text_b"]
    w = v @ p["sim.image_w"] + p["sim.image_b"]
    return np.concatenate([u, w], axis=1)


def triplet_loss(anchor, positive, negative, margin: float) -> Tensor:
    """Hinge max(0, d(a, p) - d(a, n) + margin) on L2-normalized embeddings."""
    d_ap = euclidean_distance(anchor, positive)
    d_an = euclidean_distance(anchor, negative)
    return relu(d_ap - d_an + margin)


def triplet_loss_batch(
    embeddings: Tensor, triplets: Sequence[tuple[int, int, int]], margin: float
) -> Tensor:
    """Mean hinge loss over (anchor, positive, negative) index triples."""
    if not triplets:
        return Tensor(0.0)
    a = gather_rows(embeddings, [tr[0] for tr in triplets])
    p = gather_rows(embeddings, [tr[1] for tr in triplets])
    neg = gather_rows(embeddings, [tr[2] for tr in triplets])
    per = relu(row_euclidean(a, p) - row_euclidean(a, neg) + margin)
    return mean(per)


def one_hot_labels(labels: Sequence[int]) -> np.ndarray:
    out = np.zeros((len(labels), 2))
    for i, lab in enumerate(labels):
        if lab not in (0, 1):
            raise LabelError(f"label must be 0 or 1, got {lab!r}")
        out[i, lab] = 1.0
    return out


def total_loss(
    logits: Tensor,
    labels: Sequence[int],
    embeddings: Tensor,
    triplets: Sequence[tuple[int, int, int]],
    config: ModelConfig,
    flags: AblationFlags = FULL,
) -> Tensor:
    """Cross-entropy plus lambda-weighted mean triplet loss (when contrastive is on)."""
    n = logits.data.shape[0]
    for a, p, ng in triplets:
        if not (0 <= a < n and 0 <= p < n and 0 <= ng < n):
            raise ValueError(f"triplet ({a}, {p}, {ng}) outside batch of {n}")
    ce = softmax_cross_entropy(logits, one_hot_labels(labels))
    if not flags.use_contrastive or config.lambda_ == 0.0 or not triplets:
        return ce
    return ce + config.lambda_ * triplet_loss_batch(embeddings, triplets, config.margin)


def softmax_probs(logits_row: np.ndarray) -> np.ndarray:
    z = logits_row - logits_row.max()
    e = np.exp(z)
    return e / e.sum()


def predict(
    sample: Sample,
    state: ModelState,
    flags: AblationFlags = FULL,
    *,
    knowledge: KnowledgeContext | None = None,
) -> tuple[int, float]:
    """(label, probability of that label); exact logit ties resolve to 0 (non-ironic)."""
    result = forward([sample], state, flags, knowledge=knowledge)
    probs = softmax_probs(result.logits.data[0])
    label = 0 if probs[0] >= probs[1] else 1
    return label, float(probs[label])
