"""Pearson-correlation similarity kernels for latent feature sequences.

The similarity between two H-by-T sequences is the mean over the H latent
dimensions of the per-row Pearson correlation. All kernels operate on rows
that were centered and scaled to unit norm exactly once per sequence, which
turns every pairwise similarity into H dot products of length T. The batched
matrix path performs, cell for cell, the same floating-point operations in
the same order as the single-pair path, so parallel or blocked evaluation
cannot change any result bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatchError,
    EmptyInputError,
    KTooLargeError,
    LengthMismatchError,
    TooShortError,
)

# Query block size for the batched kernel; bounds the (block, M, H, T)
# temporary without changing any per-cell arithmetic.
_BLOCK_ROWS = 32


@dataclass(frozen=True)
class EmbeddingSequence:
    """An H-by-T latent feature matrix sampled at a fixed frame rate."""

    data: np.ndarray
    rate_hz: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DimMismatchError(f"embedding data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise EmptyInputError(f"embedding data must be non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding data contains non-finite values")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.rate_hz


@dataclass(frozen=True)
class SimilarityMatrix:
    """All-pairs mean-Pearson similarities; values[i, j] = sim(query i, key j)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise DimMismatchError(f"similarity values must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("similarity matrix contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def zscore_rows(data: np.ndarray) -> np.ndarray:
    """Center each row and scale it to unit norm; constant rows become zeros.

    A zero row makes every correlation involving it exactly 0, which is the
    engine-wide convention for zero-variance inputs.
    """
    arr = np.asarray(data, dtype=np.float64)
    centered = arr - arr.mean(axis=-1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=-1, keepdims=True))
    out = np.zeros_like(centered)
    np.divide(centered, norms, out=out, where=norms > 0.0)
    return out


def pearson(x, y) -> float:
    """Pearson correlation of two equal-length vectors.

    Returns 0.0 if either vector has zero variance (no evidence either way),
    keeping constant inputs neutral instead of propagating NaN.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1:
        raise DimMismatchError("pearson expects 1-D vectors")
    if xa.shape[0] != ya.shape[0]:
        raise LengthMismatchError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    if xa.shape[0] < 2:
        raise TooShortError("pearson needs at least 2 samples")
    xn = zscore_rows(xa[None, :])[0]
    yn = zscore_rows(ya[None, :])[0]
    return float((xn * yn).sum(axis=-1))


def _check_pair(a: EmbeddingSequence, b: EmbeddingSequence) -> None:
    if a.dim != b.dim:
        raise DimMismatchError(f"dim mismatch: {a.dim} vs {b.dim}")
    if a.n_frames != b.n_frames:
        raise LengthMismatchError(f"frame-count mismatch: {a.n_frames} vs {b.n_frames}")
    if a.n_frames < 2:
        raise TooShortError("similarity needs at least 2 frames")


def sim_embeddings(z: EmbeddingSequence, f: EmbeddingSequence) -> float:
    """Mean over latent dimensions of the per-row Pearson correlation."""
    _check_pair(z, f)
    zn = zscore_rows(z.data)
    fn = zscore_rows(f.data)
    corrs = (zn * fn).sum(axis=-1)
    return float(corrs.mean())


def row_correlation_tensor(qn: np.ndarray, kn: np.ndarray) -> np.ndarray:
    """Per-row correlations between normalized stacks: (N, M, H).

    qn and kn are (N, H, T) and (M, H, T) outputs of zscore_rows. The block
    loop keeps the temporary small; each cell is reduced over its own
    contiguous T axis, so results are identical to the unblocked form.
    """
    n = qn.shape[0]
    out = np.empty((n, kn.shape[0], qn.shape[1]), dtype=np.float64)
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n)
        out[start:stop] = (qn[start:stop, None, :, :] * kn[None, :, :, :]).sum(axis=-1)
    return out


def _normalized_stack(seqs: list[EmbeddingSequence]) -> np.ndarray:
    if not seqs:
        raise EmptyInputError("no sequences given")
    dim, frames = seqs[0].dim, seqs[0].n_frames
    for s in seqs[1:]:
        if s.dim != dim:
            raise DimMismatchError(f"dim mismatch: {s.dim} vs {dim}")
        if s.n_frames != frames:
            raise LengthMismatchError(f"frame-count mismatch: {s.n_frames} vs {frames}")
    if frames < 2:
        raise TooShortError("similarity needs at least 2 frames")
    stack = np.stack([s.data for s in seqs])
    return zscore_rows(stack)


def similarity_matrix(
    queries: list[EmbeddingSequence], keys: list[EmbeddingSequence]
) -> SimilarityMatrix:
    """All-pairs similarity; cell (i, j) bit-equals sim_embeddings(queries[i], keys[j])."""
    qn = _normalized_stack(queries)
    kn = _normalized_stack(keys)
    if qn.shape[1] != kn.shape[1]:
        raise DimMismatchError(f"dim mismatch: {qn.shape[1]} vs {kn.shape[1]}")
    if qn.shape[2] != kn.shape[2]:
        raise LengthMismatchError(f"frame-count mismatch: {qn.shape[2]} vs {kn.shape[2]}")
    corr = row_correlation_tensor(qn, kn)
    return SimilarityMatrix(corr.mean(axis=-1))


def flatten_normalized(seqs: list[EmbeddingSequence]) -> np.ndarray:
    """(n, H*T) matrix of row-normalized sequences; sim(a, b) = dot/H.

    Fast path for exhaustive search: stacking the unit rows turns every
    pairwise similarity into one dot product, so a whole segment-vs-window
    score table is a single matrix multiply. Agrees with sim_embeddings to
    within 1e-10 (BLAS summation order differs from the exact kernel).
    """
    stack = _normalized_stack(seqs)
    return stack.reshape(stack.shape[0], -1)


def top_k(row, k: int) -> list[int]:
    """Indices of the k largest values, descending; ties go to the lower index."""
    arr = np.asarray(row, dtype=np.float64)
    if arr.ndim != 1:
        raise DimMismatchError("top_k expects a 1-D vector")
    if k < 1 or k > arr.shape[0]:
        raise KTooLargeError(f"k={k} out of range for row of length {arr.shape[0]}")
    order = np.argsort(-arr, kind="stable")
    return [int(i) for i in order[:k]]
