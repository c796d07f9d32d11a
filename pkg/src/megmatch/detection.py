"""Frame-level speech/silence detection from audio samples.

Features are log filterbank energies over non-overlapping frames whose rate
matches the label rate, so no resampling sits between features and labels.
The frame scorer is a linear-logistic map trained with a negative-correlation
loss; the binarization threshold is grid-searched afterwards.
"""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import LabelTimeline, round_half_away
from .errors import (
    BadConfigError,
    ConstantTargetError,
    DegenerateLabelsError,
    InsufficientDataError,
    LengthMismatchError,
    RateMismatchError,
    TooShortError,
)

LOG_FLOOR = 1e-10
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    frame_s: float = 0.02
    n_mels: int = 24

    def __post_init__(self):
        if not self.frame_s > 0 or self.n_mels < 1:
            raise BadConfigError(f"bad feature config: frame_s={self.frame_s}, n_mels={self.n_mels}")


@dataclass(frozen=True)
class FeatureFrames:
    """D-by-N matrix of frame features at a fixed frame rate."""

    data: np.ndarray
    rate_hz: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"feature data must be D x frames, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature data contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass
class FrameClassifier:
    """Linear-logistic frame scorer plus an optional binarization threshold."""

    weight: np.ndarray
    bias: float
    threshold: float | None = None

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError("weight must be a 1-D vector")
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("classifier parameters must be finite")
        self.weight = w

    def score(self, features: FeatureFrames) -> np.ndarray:
        if features.dim != self.weight.shape[0]:
            raise LengthMismatchError(
                f"features have {features.dim} dims, classifier expects {self.weight.shape[0]}"
            )
        return sigmoid(self.weight @ features.data + self.bias)


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    f1: float
    true_pos: int
    false_pos: int
    false_neg: int

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "true_pos": self.true_pos,
            "false_pos": self.false_pos,
            "false_neg": self.false_neg,
        }


@dataclass(frozen=True)
class DetectorConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    patience: int = 5
    segment_s: float = 30.0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.batch_size < 1 or self.patience < 1:
            raise BadConfigError("bad detector config")
        if not self.segment_s > 0:
            raise BadConfigError("segment_s must be positive")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: float) -> np.ndarray:
    """Triangular filters over the rfft bins, equally spaced on the mel scale."""

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins) * sample_rate_hz / n_fft
    edges = from_mel(np.linspace(0.0, to_mel(sample_rate_hz / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def frame_features(samples, sample_rate_hz: float, cfg: FeatureConfig = FeatureConfig()) -> FeatureFrames:
    """Log mel energies per non-overlapping frame, plus log total energy.

    Rectangular frames of round(frame_s * rate) samples; a trailing partial
    frame is dropped. Energies are floored at 1e-10 before the log so digital
    silence maps to a constant, finite feature vector.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not sample_rate_hz > 0:
        raise BadConfigError("sample_rate_hz must be positive")
    flen = round_half_away(cfg.frame_s * sample_rate_hz)
    if flen < 2:
        raise BadConfigError(f"frame of {cfg.frame_s}s is under 2 samples at {sample_rate_hz}Hz")
    n = x.size // flen
    if n < 1:
        raise TooShortError(f"{x.size} samples is less than one {flen}-sample frame")
    frames = x[: n * flen].reshape(n, flen)
    spectra = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mels, flen, sample_rate_hz)
    mel = np.log(np.maximum(spectra @ fb.T, LOG_FLOOR))
    total = np.log(np.maximum((frames * frames).sum(axis=1), LOG_FLOOR))
    data = np.concatenate([mel, total[:, None]], axis=1).T
    return FeatureFrames(data=data, rate_hz=sample_rate_hz / flen)


def neg_pearson_loss(pred, target) -> tuple[float, np.ndarray]:
    """Negative correlation between prediction and target, with its gradient.

    A zero-variance prediction scores 0 with zero gradient (same convention
    as the similarity kernels); a zero-variance target is a caller error.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise LengthMismatchError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size < 2:
        raise TooShortError("need at least 2 samples")
    tc = t - t.mean()
    t_norm = math.sqrt(float(tc @ tc))
    if t_norm == 0.0:
        raise ConstantTargetError("target has zero variance")
    pc = p - p.mean()
    p_norm = math.sqrt(float(pc @ pc))
    if p_norm == 0.0:
        return 0.0, np.zeros_like(p)
    p_hat = pc / p_norm
    t_hat = tc / t_norm
    r = float(p_hat @ t_hat)
    grad = -(t_hat - r * p_hat) / p_norm
    return -r, grad


def segment_pairs(
    features: list[FeatureFrames],
    labels: list[LabelTimeline],
    segment_s: float,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Chop aligned (features, labels) streams into fixed-length segments."""
    if len(features) != len(labels):
        raise LengthMismatchError(f"{len(features)} feature streams vs {len(labels)} label streams")
    out = []
    for feat, lab in zip(features, labels):
        if feat.rate_hz != lab.rate_hz:
            raise RateMismatchError(f"feature rate {feat.rate_hz} != label rate {lab.rate_hz}")
        if feat.n_frames != len(lab):
            raise LengthMismatchError(
                f"{feat.n_frames} feature frames vs {len(lab)} labels"
            )
        seg_frames = round_half_away(segment_s * feat.rate_hz)
        for k in range(feat.n_frames // seg_frames):
            sl = slice(k * seg_frames, (k + 1) * seg_frames)
            out.append((feat.data[:, sl], lab.labels[sl].astype(np.float64)))
    return out


def train_detector(
    features: list[FeatureFrames],
    labels: list[LabelTimeline],
    val_split: float,
    cfg: DetectorConfig,
    seed: int,
    max_epochs: int = 200,
) -> tuple[FrameClassifier, list[dict]]:
    """Fit the frame scorer on fixed-length segments with early stopping.

    Segments whose labels are constant are excluded from the correlation loss
    (it is undefined there) but the training still completes. The returned
    classifier has no threshold yet; use grid_search_threshold on validation
    scores to set one.
    """
    segments = segment_pairs(features, labels, cfg.segment_s)
    n_total = len(segments)
    if n_total < 2:
        raise InsufficientDataError(f"need at least 2 segments, got {n_total}")
    n_val = round_half_away(n_total * val_split)
    if n_val < 1 or n_val >= n_total:
        raise InsufficientDataError(f"val_split={val_split} leaves no usable split of {n_total}")
    train_segs = segments[: n_total - n_val]
    val_segs = [s for s in segments[n_total - n_val :] if s[1].std() > 0]
    usable = [i for i, s in enumerate(train_segs) if s[1].std() > 0]
    if not usable or not val_segs:
        raise InsufficientDataError("every segment in a split has constant labels")

    dim = features[0].dim
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
    bound = 1.0 / math.sqrt(dim)
    weight = rng.uniform(-bound, bound, size=dim)
    bias = 0.0

    m_state = np.zeros(dim + 1)
    v_state = np.zeros(dim + 1)
    step = 0

    def split_loss(segs, w, b) -> float:
        vals = []
        for x, y in segs:
            if y.std() == 0:
                continue
            loss, _ = neg_pearson_loss(sigmoid(w @ x + b), y)
            vals.append(loss)
        return float(np.mean(vals))

    best = (np.inf, weight.copy(), bias)
    stale = 0
    history: list[dict] = []
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(train_segs))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad_w = np.zeros(dim)
            grad_b = 0.0
            batch_losses = []
            for si in batch:
                x, y = train_segs[si]
                if y.std() == 0:
                    continue
                scores = sigmoid(weight @ x + bias)
                loss, g_score = neg_pearson_loss(scores, y)
                g_logit = g_score * scores * (1.0 - scores)
                grad_w += x @ g_logit
                grad_b += g_logit.sum()
                batch_losses.append(loss)
            if not batch_losses:
                continue
            grad = np.concatenate([grad_w, [grad_b]]) / len(batch_losses)
            step += 1
            m_state = ADAM_BETA1 * m_state + (1 - ADAM_BETA1) * grad
            v_state = ADAM_BETA2 * v_state + (1 - ADAM_BETA2) * grad * grad
            m_hat = m_state / (1 - ADAM_BETA1**step)
            v_hat = v_state / (1 - ADAM_BETA2**step)
            update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            weight = weight - update[:-1]
            bias = bias - float(update[-1])
            epoch_losses.extend(batch_losses)
        val_loss = split_loss(val_segs, weight, bias)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_loss": val_loss}
        )
        if val_loss < best[0]:
            best = (val_loss, weight.copy(), bias)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return FrameClassifier(weight=best[1], bias=best[2], threshold=None), history


def grid_search_threshold(scores, labels) -> float:
    """Exhaustive scan of thresholds 0.00..1.00 (step 0.01) maximizing F1.

    Ties resolve to the lowest threshold. Requires both classes present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatchError(f"shape mismatch: {s.shape} vs {y.shape}")
    if not ((y == 1).any() and (y == 0).any()):
        raise DegenerateLabelsError("labels must contain both classes")
    pos = y == 1
    grid = np.arange(101) / 100.0
    best_theta, best_f1 = 0.0, -1.0
    for theta in grid:
        pred = s >= theta
        tp = int(np.count_nonzero(pred & pos))
        fp = int(np.count_nonzero(pred & ~pos))
        fn = int(np.count_nonzero(~pred & pos))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
        if f1 > best_f1:
            best_theta, best_f1 = float(theta), f1
    return best_theta


def binarize(scores, threshold: float, rate_hz: float = 50.0) -> LabelTimeline:
    """1 where score >= threshold, else 0."""
    s = np.asarray(scores, dtype=np.float64)
    return LabelTimeline(rate_hz=rate_hz, labels=(s >= threshold).astype(np.uint8))


def score_f1(pred: LabelTimeline, truth: LabelTimeline) -> DetectionMetrics:
    """Precision/recall/F1 with speech (1) as the positive class."""
    if pred.rate_hz != truth.rate_hz:
        raise RateMismatchError(f"rate mismatch: {pred.rate_hz} vs {truth.rate_hz}")
    if len(pred) != len(truth):
        raise LengthMismatchError(f"length mismatch: {len(pred)} vs {len(truth)}")
    p = pred.labels == 1
    t = truth.labels == 1
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return DetectionMetrics(
        precision=precision, recall=recall, f1=f1,
        true_pos=tp, false_pos=fp, false_neg=fn,
    )


# -- audio and checkpoint files ------------------------------------------------

def write_wav(path, samples, sample_rate_hz: int) -> None:
    """Mono 16-bit PCM with the canonical 44-byte header."""
    x = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.rint(x * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate_hz))
        fh.writeframes(pcm.tobytes())


def read_audio(path) -> tuple[np.ndarray, float]:
    """Load mono PCM16 WAV (extra chunks skipped) or one-float-per-line CSV."""
    p = Path(path)
    if p.suffix.lower() == ".wav":
        with wave.open(str(p), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise BadConfigError(f"{p}: expected mono 16-bit PCM")
            rate = float(fh.getframerate())
            pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
        return pcm.astype(np.float64) / 32767.0, rate
    samples = np.loadtxt(p, dtype=np.float64, ndmin=1)
    return samples, 0.0  # caller must supply the rate for raw sample files


def save_detector(path, clf: FrameClassifier, feature_cfg: FeatureConfig) -> None:
    p = Path(path)
    payload = {
        "D": int(clf.weight.shape[0]),
        "weight": [float(v) for v in clf.weight],
        "bias": float(clf.bias),
        "threshold": None if clf.threshold is None else float(clf.threshold),
        "feature_cfg": {"frame_s": feature_cfg.frame_s, "n_mels": feature_cfg.n_mels},
    }
    p.write_text(json.dumps(payload, indent=2) + "\n")


def load_detector(path) -> tuple[FrameClassifier, FeatureConfig]:
    payload = json.loads(Path(path).read_text())
    clf = FrameClassifier(
        weight=np.array(payload["weight"], dtype=np.float64),
        bias=float(payload["bias"]),
        threshold=payload["threshold"],
    )
    fc = payload["feature_cfg"]
    return clf, FeatureConfig(frame_s=fc["frame_s"], n_mels=fc["n_mels"])
