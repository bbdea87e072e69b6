"""Text, caption, and image encoders.

These are deliberately small trainable stand-ins for large pretrained
encoders: embedding lookup, mean pooling over non-padding positions, then a
linear projection with relu. An adapter accepts precomputed image feature
vectors for anyone who has real ones. Token ids are sorted before pooling so
the mean is evaluated in a canonical order, which makes the (mathematical)
permutation invariance of mean pooling hold bit-exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, FeatureDimError, FormatError
from .tensor import Tape, Tensor, gather_rows, matmul, mean, relu, reshape, stack

PAD, UNK, MASK = "<pad>", "<unk>", "<mask>"
PAD_ID, UNK_ID, MASK_ID = 0, 1, 2
_RESERVED = (PAD, UNK, MASK)

_TOKEN_RE = re.compile(r"[\w']+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; underscores and apostrophes stay inside tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocab:
    """Token-to-id map with fixed reserved ids (PAD=0, UNK=1, MASK=2)."""

    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(_RESERVED)}
        for token, want in zip(_RESERVED, range(3)):
            if self.token_to_id.get(token) != want:
                raise ValueError(f"reserved token {token!r} must have id {want}")

    @classmethod
    def build(cls, token_lists) -> "Vocab":
        """Vocabulary over sorted unique tokens; deterministic for any input order."""
        seen = set()
        for tokens in token_lists:
            seen.update(tokens)
        mapping = {t: i for i, t in enumerate(_RESERVED)}
        for token in sorted(seen - set(_RESERVED)):
            mapping[token] = len(mapping)
        return cls(mapping)

    @classmethod
    def from_tokens_in_order(cls, ordered_tokens) -> "Vocab":
        mapping = dict(zip(ordered_tokens, range(len(ordered_tokens))))
        return cls(mapping)

    def __len__(self):
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def ordered_tokens(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.__getitem__)


@dataclass
class EncoderParams:
    """One encoder path: token embeddings plus a projection to the hidden size.

    Fields may hold plain arrays (inference) or taped tensors (training);
    wrap once per step so gradients aggregate on a single tensor identity.
    """

    embedding: np.ndarray | Tensor
    proj_w: np.ndarray | Tensor
    proj_b: np.ndarray | Tensor

    def taped(self, tape: Tape | None) -> "EncoderParams":
        def wrap(x):
            return x if isinstance(x, Tensor) else Tensor(x, tape)

        return EncoderParams(wrap(self.embedding), wrap(self.proj_w), wrap(self.proj_b))


def _pooled_embedding(token_ids, embedding: Tensor, allow_empty: bool) -> Tensor:
    ids = sorted(i for i in token_ids if i != PAD_ID)
    if not ids:
        if not allow_empty:
            raise EmptyInputError("cannot encode an empty token sequence")
        dim = embedding.data.shape[1]
        return Tensor(np.zeros(dim))
    return mean(gather_rows(embedding, ids), axis=0)


def encode_token_batch(
    token_id_lists,
    params: EncoderParams,
    *,
    max_len: int = 128,
    tape: Tape | None = None,
    allow_empty: bool = False,
) -> Tensor:
    """Encode a batch of id sequences into an (n, d_h) matrix."""
    p = params.taped(tape)
    pooled = [
        _pooled_embedding(ids[:max_len], p.embedding, allow_empty)
        for ids in token_id_lists
    ]
    return relu(matmul(stack(pooled), p.proj_w) + p.proj_b)


def encode_text(
    token_ids,
    params: EncoderParams,
    *,
    max_len: int = 128,
    tape: Tape | None = None,
) -> Tensor:
    """Encode one id sequence into a d_h vector: lookup, mean pool, project, relu."""
    if len(token_ids) == 0:
        raise EmptyInputError("cannot encode an empty token sequence")
    out = encode_token_batch([token_ids], params, max_len=max_len, tape=tape)
    return reshape(out, (out.data.shape[1],))


@dataclass
class ImagePathParams:
    """Image encoder: attribute-word path plus optional precomputed-vector path."""

    attrs: EncoderParams
    pre_w: np.ndarray | Tensor | None = None
    pre_b: np.ndarray | Tensor | None = None


def encode_image(
    image_input,
    params: ImagePathParams,
    *,
    max_len: int = 128,
    tape: Tape | None = None,
) -> Tensor:
    """Encode either attribute-word ids (list of int) or a precomputed vector.

    The attribute path mirrors the text encoder with image parameters; the
    precomputed path projects the raw vector to the hidden size with relu.
    """
    if isinstance(image_input, np.ndarray):
        if params.pre_w is None or params.pre_b is None:
            raise FeatureDimError(
                "model has no precomputed-feature projection; "
                "set image_feature_dim in the config"
            )
        w = params.pre_w if isinstance(params.pre_w, Tensor) else Tensor(params.pre_w, tape)
        b = params.pre_b if isinstance(params.pre_b, Tensor) else Tensor(params.pre_b, tape)
        expected = w.data.shape[0]
        if image_input.shape != (expected,):
            raise FeatureDimError(
                f"precomputed image vector has shape {image_input.shape}, "
                f"expected ({expected},)"
            )
        return relu(matmul(Tensor(image_input), w) + b)
    return encode_text(image_input, params.attrs, max_len=max_len, tape=tape)


def apply_text_mask(token_ids, ratio: float, rng: np.random.Generator) -> list[int]:
    """Replace exactly round(n_nonpad * ratio) distinct non-PAD positions with MASK.

    Rounding is half-up. ratio is clamped into [0, 1]. The rng stream is left
    untouched when the mask count is zero.
    """
    ratio = min(max(float(ratio), 0.0), 1.0)
    ids = list(token_ids)
    positions = [i for i, t in enumerate(ids) if t != PAD_ID]
    k = int(np.floor(len(positions) * ratio + 0.5))
    if k == 0:
        return ids
    chosen = rng.choice(len(positions), size=k, replace=False)
    for c in chosen:
        ids[positions[int(c)]] = MASK_ID
    return ids


def load_precomputed_features(path) -> dict[str, np.ndarray]:
    """Load an id -> vector map from a feature file.

    Format: UTF-8 lines ``<id>\\t<dim>\\t<v1> <v2> ... <vdim>``. Every line
    must declare the same dim as the first line.
    """
    features: dict[str, np.ndarray] = {}
    expected_dim = None
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
        rec_id, dim_s, values_s = parts
        try:
            dim = int(dim_s)
            values = np.array([float(v) for v in values_s.split()], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if values.shape != (dim,):
            raise FormatError(
                f"{path}:{lineno}: declared dim {dim} but found {values.size} values"
            )
        if expected_dim is None:
            expected_dim = dim
        elif dim != expected_dim:
            raise FormatError(
                f"{path}:{lineno}: dim {dim} differs from first record's {expected_dim}"
            )
        features[rec_id] = values
    return features
