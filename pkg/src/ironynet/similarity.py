"""Cross-modal semantic similarity at two granularities.

Word level: cosine matrix between text-side and image-side concept vectors,
summarized by the global max and the mean of per-text-row maxima. Sample
level: projected text+caption and image features are concatenated, centered
by running statistics, and mapped by the inverse square root of the running
covariance (ZCA whitening) into a shared space where cosine similarity is
meaningful; with momentum 1 the mapped batch has near-identity covariance.
Mapping statistics are constants in the backward pass, mirroring
frozen-statistic normalization practice.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InsufficientSamplesError
from .linalg import covariance, inverse_sqrt_psd
from .tensor import Tape, Tensor, concat, matmul, reshape, row_cosine_or_zero, split

_ZERO_ROW_TOL = 0.0  # concept rows are exact zeros when OOV


@dataclass
class SimilarityFeatures:
    """The three similarity scores attached to one sample, each in [-1, 1]."""

    word_max: float = 0.0
    word_mean: float = 0.0
    sample: float = 0.0
    word_oov: bool = False
    sample_zero: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.word_max, self.word_mean, self.sample])


def word_level_similarity(
    text_concepts: np.ndarray, image_concepts: np.ndarray
) -> tuple[float, float, bool]:
    """(max, mean-of-row-maxima, oov_flag) over the pairwise cosine matrix.

    Zero-norm rows (out-of-vocabulary placeholders) are excluded on both
    sides; if either side is left empty, both scores are 0 with the flag set.
    Outputs are clipped into [-1, 1].
    """
    t = np.asarray(text_concepts, dtype=np.float64)
    v = np.asarray(image_concepts, dtype=np.float64)
    if t.ndim != 2 or v.ndim != 2:
        raise ValueError("concept inputs must be 2-D matrices")
    tn = np.sqrt(np.sum(t * t, axis=1))
    vn = np.sqrt(np.sum(v * v, axis=1))
    t = t[tn > _ZERO_ROW_TOL]
    v = v[vn > _ZERO_ROW_TOL]
    if t.shape[0] == 0 or v.shape[0] == 0:
        return 0.0, 0.0, True
    tu = t / np.sqrt(np.sum(t * t, axis=1, keepdims=True))
    vu = v / np.sqrt(np.sum(v * v, axis=1, keepdims=True))
    sims = tu @ vu.T
    s_max = float(np.clip(sims.max(), -1.0, 1.0))
    s_mean = float(np.clip(sims.max(axis=1).mean(), -1.0, 1.0))
    return s_max, s_mean, False


@dataclass
class MappingState:
    """Running statistics and the derived shared-space whitening matrix."""

    dim: int
    momentum: float = 0.9
    eps: float = 1e-5
    mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    cov: np.ndarray = field(default=None)  # type: ignore[assignment]
    matrix: np.ndarray = field(default=None)  # type: ignore[assignment]
    fit_count: int = 0
    frozen: bool = False

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.dim)
        if self.cov is None:
            self.cov = np.eye(self.dim)
        if self.matrix is None:
            self.matrix = inverse_sqrt_psd(self.cov, self.eps)

    def copy(self) -> "MappingState":
        return replace(
            self, mean=self.mean.copy(), cov=self.cov.copy(), matrix=self.matrix.copy()
        )


def fit_mapping(z_batch: np.ndarray, state: MappingState) -> MappingState:
    """Update running mean/covariance from a batch and rederive the mapping.

    In frozen (inference) mode the state is returned unchanged. Training mode
    needs n >= 2 rows. With momentum m the running statistic is
    (1 - m) * old + m * batch, so momentum 1 adopts the batch statistics
    outright.
    """
    if state.frozen:
        return state
    z = np.asarray(z_batch, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != state.dim:
        raise ValueError(f"expected (n, {state.dim}) batch, got shape {z.shape}")
    if z.shape[0] < 2:
        raise InsufficientSamplesError(
            f"mapping fit needs at least 2 samples, got {z.shape[0]}"
        )
    m = state.momentum
    mean = (1.0 - m) * state.mean + m * z.mean(axis=0)
    cov = (1.0 - m) * state.cov + m * covariance(z)
    cov = (cov + cov.T) / 2.0
    return replace(
        state,
        mean=mean,
        cov=cov,
        matrix=inverse_sqrt_psd(cov, state.eps),
        fit_count=state.fit_count + 1,
    )


@dataclass
class SampleProjection:
    """Linear projections into the shared space: [t + c] -> d_s and v -> d_s."""

    text_w: np.ndarray | Tensor
    text_b: np.ndarray | Tensor
    image_w: np.ndarray | Tensor
    image_b: np.ndarray | Tensor

    def taped(self, tape: Tape | None) -> "SampleProjection":
        def wrap(x):
            return x if isinstance(x, Tensor) else Tensor(x, tape)

        return SampleProjection(
            wrap(self.text_w), wrap(self.text_b), wrap(self.image_w), wrap(self.image_b)
        )


def sample_similarity_batch(
    t: Tensor,
    c: Tensor,
    v: Tensor,
    proj: SampleProjection,
    state: MappingState,
    *,
    tape: Tape | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Shared-space cosine per sample for (n, d_h) feature batches.

    Projects [t + c] and v to the shared width, concatenates, centers by the
    running mean, applies the whitening matrix, splits the result back into
    the two halves and takes their row-wise cosine. Gradients flow to the
    features and projections only; the statistics are constants. Returns
    (similarities, zero_norm_mask).
    """
    if state.fit_count < 1:
        raise ConfigError(
            "mapping statistics are unfitted; train with semantic features "
            "enabled or load a trained model"
        )
    p = proj.taped(tape)
    d_s = p.text_w.data.shape[1]
    u = matmul(concat([t, c], axis=1), p.text_w) + p.text_b
    w = matmul(v, p.image_w) + p.image_b
    z = concat([u, w], axis=1)
    mapped = matmul(z - Tensor(state.mean), Tensor(state.matrix))
    u_shared, w_shared = split(mapped, [d_s, d_s], axis=1)
    return row_cosine_or_zero(u_shared, w_shared)


def sample_level_similarity(
    t,
    c,
    v,
    proj: SampleProjection,
    state: MappingState,
    *,
    tape: Tape | None = None,
) -> tuple[Tensor, bool]:
    """Single-sample wrapper over the batched shared-space cosine.

    Accepts d_h vectors for the text, caption, and image features; returns
    (similarity scalar tensor, zero_norm_flag).
    """
    def as_matrix(x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        return reshape(x, (1, x.data.shape[0])) if x.ndim == 1 else x

    sims, zero = sample_similarity_batch(
        as_matrix(t), as_matrix(c), as_matrix(v), proj, state, tape=tape
    )
    return reshape(sims, ()), bool(zero[0])
