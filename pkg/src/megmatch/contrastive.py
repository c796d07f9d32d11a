"""Temperature-scaled contrastive loss, its gradient, and a linear encoder trainer.

The loss treats each (query, key) pair in a batch as the positive among the
batch's other keys, with the mean-per-dimension Pearson similarity as the
score. Because the score is a correlation, gradients flow through both the
centering and the normalization of each query row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import MegRecording, round_half_away
from .errors import (
    DimMismatchError,
    InsufficientDataError,
    KTooLargeError,
    LengthMismatchError,
    NonPositiveTemperatureError,
    NotSquareError,
    ShapeMismatchError,
)
from .similarity import EmbeddingSequence, SimilarityMatrix, row_correlation_tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.015
    batch_size: int = 256
    learning_rate: float = 1e-3
    patience: int = 5
    top_k_monitor: int = 10

    def __post_init__(self):
        if not self.temperature > 0:
            raise NonPositiveTemperatureError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1 or self.patience < 1 or self.top_k_monitor < 1:
            raise ValueError("batch_size, patience and top_k_monitor must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class LinearEncoder:
    """Per-frame linear map from C input channels to H latent dimensions."""

    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeMismatchError(f"weight must be H x C, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weight contains non-finite values")
        object.__setattr__(self, "weight", w)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def encode(self, recording) -> EmbeddingSequence:
        """Apply the map frame-wise to a recording (or any H-by-T sequence)."""
        data = recording.data
        if data.shape[0] != self.in_channels:
            raise DimMismatchError(
                f"recording has {data.shape[0]} channels, encoder expects {self.in_channels}"
            )
        return EmbeddingSequence(data=self.weight @ data, rate_hz=recording.rate_hz)


def _as_square_values(sims) -> np.ndarray:
    values = sims.values if isinstance(sims, SimilarityMatrix) else np.asarray(sims, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise NotSquareError(f"similarity matrix must be square, got {values.shape}")
    return values


def _softmax_loss(sims: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of each row against its diagonal, with row softmax."""
    logits = sims / temperature
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + row_max
    probs = np.exp(logits - lse)
    loss = float(np.mean(lse[:, 0] - np.diagonal(logits)))
    return loss, probs


def infonce_loss(sims, temperature: float) -> float:
    """Contrastive loss over a square similarity matrix; diagonal = positives.

    Stabilized by per-row max subtraction, which matters at sharp temperatures
    where raw exponents overflow.
    """
    values = _as_square_values(sims)
    if not temperature > 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {temperature}")
    loss, _ = _softmax_loss(values, temperature)
    return loss


def _stack_sequences(seqs: list[EmbeddingSequence]) -> np.ndarray:
    dim, frames = seqs[0].dim, seqs[0].n_frames
    for s in seqs[1:]:
        if s.dim != dim:
            raise DimMismatchError(f"dim mismatch: {s.dim} vs {dim}")
        if s.n_frames != frames:
            raise LengthMismatchError(f"frame-count mismatch: {s.n_frames} vs {frames}")
    return np.stack([s.data for s in seqs])


def _normalize_with_norms(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centered = stack - stack.mean(axis=-1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=-1, keepdims=True))
    unit = np.zeros_like(centered)
    np.divide(centered, norms, out=unit, where=norms > 0.0)
    return unit, norms


def _forward_backward(
    z_stack: np.ndarray, key_unit: np.ndarray, temperature: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, d(loss)/d(z_stack), and the similarity matrix for one batch.

    d(sim)/d(z row) = (key_hat - r * z_hat) / ||z_centered|| / H; the chain
    through the softmax contributes (probs - identity) / (N * temperature).
    Zero-variance query rows score 0 by convention and get zero gradient.
    """
    n, h, _ = z_stack.shape
    z_unit, z_norms = _normalize_with_norms(z_stack)
    corr = row_correlation_tensor(z_unit, key_unit)  # (N, N, H)
    sims = corr.mean(axis=-1)
    loss, probs = _softmax_loss(sims, temperature)
    coeff = (probs - np.eye(n)) / (n * temperature)  # (N, N)
    pulled = np.einsum("ij,jht->iht", coeff, key_unit)
    self_weight = np.einsum("ij,ijh->ih", coeff, corr)
    grad = pulled - self_weight[:, :, None] * z_unit
    scale = np.zeros_like(z_norms)
    np.divide(1.0, h * z_norms, out=scale, where=z_norms > 0.0)
    return loss, grad * scale, sims


def infonce_grad(
    queries: list[EmbeddingSequence],
    keys: list[EmbeddingSequence],
    temperature: float,
) -> np.ndarray:
    """Analytic gradient of infonce_loss w.r.t. every query entry: (N, H, T)."""
    if not temperature > 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {temperature}")
    if len(queries) != len(keys):
        raise LengthMismatchError(f"{len(queries)} queries vs {len(keys)} keys")
    if not queries:
        raise ShapeMismatchError("empty batch")
    z_stack = _stack_sequences(queries)
    f_stack = _stack_sequences(keys)
    if z_stack.shape[1:] != f_stack.shape[1:]:
        raise ShapeMismatchError(
            f"query shape {z_stack.shape[1:]} != key shape {f_stack.shape[1:]}"
        )
    key_unit, _ = _normalize_with_norms(f_stack)
    _, grad, _ = _forward_backward(z_stack, key_unit, temperature)
    return grad


def topk_accuracy(sims, k: int) -> float:
    """Fraction of rows whose diagonal ranks within the k best (lower index wins ties)."""
    values = _as_square_values(sims)
    n = values.shape[0]
    if k < 1 or k > n:
        raise KTooLargeError(f"k={k} out of range for {n} rows")
    diag = np.diagonal(values)
    better = (values > diag[:, None]).sum(axis=1)
    idx = np.arange(n)
    tied_before = ((values == diag[:, None]) & (idx[None, :] < idx[:, None])).sum(axis=1)
    return float(np.mean(better + tied_before < k))


def train_linear_encoder(
    meg_windows: list[MegRecording],
    speech_features: list[EmbeddingSequence],
    val_split: float,
    cfg: ContrastiveConfig,
    seed: int,
    max_epochs: int = 100,
) -> tuple[LinearEncoder, list[dict]]:
    """Fit the encoder by contrastive mini-batch descent with early stopping.

    The pair list is split temporally (last val_split fraction held out).
    Training stops when validation top-k accuracy fails to improve for
    cfg.patience consecutive epochs; the best-validation weights are returned
    together with the per-epoch history.
    """
    if len(meg_windows) != len(speech_features):
        raise LengthMismatchError(
            f"{len(meg_windows)} recordings vs {len(speech_features)} feature sequences"
        )
    n_total = len(meg_windows)
    if n_total < 2 * cfg.batch_size:
        raise InsufficientDataError(
            f"need at least {2 * cfg.batch_size} pairs, got {n_total}"
        )
    x = np.stack([m.data for m in meg_windows])
    f = _stack_sequences(speech_features)
    if x.shape[2] != f.shape[2]:
        raise ShapeMismatchError(f"recording frames {x.shape[2]} != feature frames {f.shape[2]}")
    if len({m.data.shape for m in meg_windows}) != 1:
        raise ShapeMismatchError("recordings must share one shape")

    n_val = round_half_away(n_total * val_split)
    if n_val < 1 or n_val >= n_total:
        raise InsufficientDataError(f"val_split={val_split} leaves no usable split of {n_total}")
    n_train = n_total - n_val
    x_train, f_train = x[:n_train], f[:n_train]
    x_val = x[n_train:]
    f_val_unit, _ = _normalize_with_norms(f[n_train:])
    f_train_unit, _ = _normalize_with_norms(f_train)

    h, c = f.shape[1], x.shape[1]
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    bound = 1.0 / math.sqrt(c)
    weight = rng.uniform(-bound, bound, size=(h, c))

    m_state = np.zeros_like(weight)
    v_state = np.zeros_like(weight)
    step = 0
    k_monitor = min(cfg.top_k_monitor, n_val)

    def val_accuracy(w: np.ndarray) -> float:
        z_val = np.matmul(w, x_val)
        z_unit, _ = _normalize_with_norms(z_val)
        sims = row_correlation_tensor(z_unit, f_val_unit).mean(axis=-1)
        return topk_accuracy(sims, k_monitor)

    best_weight = weight.copy()
    best_acc = -np.inf
    stale = 0
    history: list[dict] = []

    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(n_train)
        if n_train >= cfg.batch_size:
            batches = [
                perm[i : i + cfg.batch_size]
                for i in range(0, n_train - cfg.batch_size + 1, cfg.batch_size)
            ]
        else:
            batches = [perm]
        losses = []
        for idx in batches:
            xb = x_train[idx]
            z = np.matmul(weight, xb)
            loss, grad_z, _ = _forward_backward(z, f_train_unit[idx], cfg.temperature)
            grad_w = np.einsum("nht,nct->hc", grad_z, xb)
            step += 1
            m_state = ADAM_BETA1 * m_state + (1 - ADAM_BETA1) * grad_w
            v_state = ADAM_BETA2 * v_state + (1 - ADAM_BETA2) * grad_w * grad_w
            m_hat = m_state / (1 - ADAM_BETA1**step)
            v_hat = v_state / (1 - ADAM_BETA2**step)
            weight = weight - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            losses.append(loss)
        acc = val_accuracy(weight)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_topk": acc}
        )
        if acc > best_acc:
            best_acc = acc
            best_weight = weight.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return LinearEncoder(weight=best_weight), history


# -- checkpoint files ------------------------------------------------------------

def _weights_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def save_encoder(path, encoder: LinearEncoder, seed: int, config: dict) -> None:
    """JSON header next to a raw f32 weight payload (row-major H x C)."""
    p = Path(path)
    header = {
        "C": encoder.in_channels,
        "H": encoder.out_dim,
        "seed": seed,
        "config": config,
        "weights_file": _weights_path(p).name,
    }
    p.write_text(json.dumps(header, indent=2) + "\n")
    _weights_path(p).write_bytes(
        np.ascontiguousarray(encoder.weight, dtype="<f4").tobytes()
    )


def load_encoder(path) -> tuple[LinearEncoder, dict]:
    p = Path(path)
    header = json.loads(p.read_text())
    raw = np.frombuffer(_weights_path(p).read_bytes(), dtype="<f4")
    weight = raw.reshape(header["H"], header["C"]).astype(np.float64)
    return LinearEncoder(weight=weight), header
