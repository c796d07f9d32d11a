"""Deterministic synthetic worlds for exercising the retrieval and detection paths.

All randomness comes from counter-based Philox streams keyed by
(seed, purpose, index), so any artifact can be regenerated bit-identically
on any platform without stored fixtures, and generation order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    EventRow,
    EventTable,
    LabelTimeline,
    MegRecording,
    SilenceInsertion,
    round_half_away,
)
from .errors import BadConfigError, PlantTooLongError
from .similarity import EmbeddingSequence

# stream purposes (second key word, high half)
_BOOK = 1
_QUERY_FILL = 2
_QUERY_NOISE = 3
_PAIR_X = 4
_PAIR_NOISE = 5
_PAIR_MIX = 6
_WORLD_SPEECH = 7
_WORLD_LAYOUT = 8


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Independent deterministic stream for (seed, purpose, index)."""
    if seed < 0:
        raise BadConfigError("seed must be non-negative")
    key = np.array([seed, (purpose << 32) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_books: int = 10
    segs_per_book: int = 20
    dim: int = 8
    rate_hz: float = 10.0
    window_s: float = 5.0
    noise_sigma: float = 1.0
    plant_book: int = 0
    plant_offset_s: float = 0.0

    def __post_init__(self):
        if self.n_books < 1 or self.segs_per_book < 1 or self.dim < 1:
            raise BadConfigError("n_books, segs_per_book and dim must be >= 1")
        if not (0 <= self.plant_book < self.n_books):
            raise BadConfigError(f"plant_book {self.plant_book} out of range")
        if self.noise_sigma < 0 or self.plant_offset_s < 0:
            raise BadConfigError("noise_sigma and plant_offset_s must be non-negative")
        if not self.rate_hz > 0 or not self.window_s > 0:
            raise BadConfigError("rate_hz and window_s must be positive")

    @property
    def window_frames(self) -> int:
        return round_half_away(self.window_s * self.rate_hz)

    @property
    def book_frames(self) -> int:
        return self.segs_per_book * self.window_frames


def book_name(index: int) -> str:
    return f"book_{index:04d}"


def gen_library(cfg: SynthConfig) -> list[tuple[str, EmbeddingSequence]]:
    """One standard-normal latent stream per book, keyed by (seed, book index)."""
    out = []
    for i in range(cfg.n_books):
        data = stream(cfg.seed, _BOOK, i).standard_normal((cfg.dim, cfg.book_frames))
        out.append((book_name(i), EmbeddingSequence(data=data, rate_hz=cfg.rate_hz)))
    return out


def plant_query(
    cfg: SynthConfig,
    library: list[tuple[str, EmbeddingSequence]],
    total_s: float | None = None,
) -> EmbeddingSequence:
    """Noise stream with the planted book embedded at plant_offset_s.

    With noise_sigma 0 the planted span is bit-identical to the book. The
    stream ends right after the planted span unless total_s asks for more.
    """
    book = library[cfg.plant_book][1]
    prefix = round_half_away(cfg.plant_offset_s * cfg.rate_hz)
    needed = prefix + book.n_frames
    total = needed if total_s is None else round_half_away(total_s * cfg.rate_hz)
    if total < needed:
        raise PlantTooLongError(
            f"plant needs {needed} frames but query is only {total}"
        )
    parts = [stream(cfg.seed, _QUERY_FILL, 0).standard_normal((cfg.dim, prefix))]
    span = book.data
    if cfg.noise_sigma > 0:
        span = span + cfg.noise_sigma * stream(cfg.seed, _QUERY_NOISE, 0).standard_normal(
            span.shape
        )
    parts.append(span)
    if total > needed:
        parts.append(
            stream(cfg.seed, _QUERY_FILL, 1).standard_normal((cfg.dim, total - needed))
        )
    return EmbeddingSequence(data=np.concatenate(parts, axis=1), rate_hz=cfg.rate_hz)


def gen_training_pairs(
    seed: int,
    n_pairs: int,
    channels: int,
    dim: int,
    frames: int,
    rate_hz: float = 10.0,
    mix_noise_sigma: float = 0.5,
) -> tuple[list[MegRecording], list[EmbeddingSequence], np.ndarray]:
    """Paired (recording, feature) lists with features = W_true @ X + noise.

    W_true has unit-norm rows so the signal part of every feature row has
    unit variance; mix_noise_sigma then sets the feature signal-to-noise.
    """
    x = stream(seed, _PAIR_X, 0).standard_normal((n_pairs, channels, frames))
    w_true = stream(seed, _PAIR_MIX, 0).standard_normal((dim, channels))
    w_true /= np.sqrt((w_true * w_true).sum(axis=1, keepdims=True))
    f = np.matmul(w_true, x)
    if mix_noise_sigma > 0:
        f = f + mix_noise_sigma * stream(seed, _PAIR_NOISE, 0).standard_normal(f.shape)
    recordings = [MegRecording(data=x[i], rate_hz=rate_hz) for i in range(n_pairs)]
    feats = [EmbeddingSequence(data=f[i], rate_hz=rate_hz) for i in range(n_pairs)]
    return recordings, feats, w_true


# -- detection world -----------------------------------------------------------

@dataclass(frozen=True)
class DetectionWorldConfig:
    seed: int = 0
    n_sentences: int = 40
    n_insertions: int = 20
    sentence_s: tuple[float, float] = (1.5, 4.0)
    gap_s: tuple[float, float] = (0.3, 1.0)
    edge_s: float = 0.5
    insertion_median_s: float = 0.03
    sample_rate_hz: float = 16000.0
    label_rate_hz: float = 50.0
    band_hz: tuple[float, float] = (300.0, 3400.0)

    def __post_init__(self):
        if self.n_sentences < 1 or self.n_insertions < 0:
            raise BadConfigError("n_sentences must be >= 1, n_insertions >= 0")
        if self.n_insertions > 2 * self.n_sentences:
            raise BadConfigError(
                f"{self.n_insertions} insertions need more than "
                f"{2 * self.n_sentences} row boundaries"
            )


@dataclass(frozen=True)
class DetectionWorld:
    samples: np.ndarray
    sample_rate_hz: float
    table: EventTable
    labels: LabelTimeline
    insertions: tuple[SilenceInsertion, ...]


def _grid_ms(rng: np.random.Generator, lo: float, hi: float) -> int:
    """Duration in whole milliseconds, uniform on [lo, hi] seconds."""
    return int(rng.integers(round(lo * 1000), round(hi * 1000) + 1))


def _bandlimited_burst(rng: np.random.Generator, n: int, rate: float, band) -> np.ndarray:
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    x = np.fft.irfft(spec, n=n)
    peak = np.abs(x).max()
    return 0.5 * x / peak if peak > 0 else x


def gen_detection_world(cfg: DetectionWorldConfig) -> DetectionWorld:
    """Alternating speech bursts and silences, with extra silences spliced in.

    Speech spans are band-limited noise; all silences are digital zeros. The
    event table's recording clock runs ahead of its chapter clock by exactly
    the spliced durations, and the emitted labels mark speech spans on the
    recording clock. Durations sit on a millisecond grid so times stay exact.
    """
    layout = stream(cfg.seed, _WORLD_LAYOUT, 0)

    # row layout in ms: lead silence, (speech, gap)*, speech, trail silence
    edge_ms = round(cfg.edge_s * 1000)
    row_specs: list[tuple[str, int]] = [("silence", edge_ms)]
    for k in range(cfg.n_sentences):
        row_specs.append(("speech", _grid_ms(layout, *cfg.sentence_s)))
        if k < cfg.n_sentences - 1:
            row_specs.append(("silence", _grid_ms(layout, *cfg.gap_s)))
    row_specs.append(("silence", edge_ms))

    # spliced silences at distinct row boundaries (boundary b sits before row b+1)
    n_boundaries = len(row_specs) - 1
    chosen = sorted(
        int(b) for b in layout.choice(n_boundaries, size=cfg.n_insertions, replace=False)
    )
    log_sigma = 0.35
    insert_ms = {
        b: max(2, round(1000 * cfg.insertion_median_s * float(np.exp(layout.normal(0.0, log_sigma)))))
        for b in chosen
    }

    # pad the trailing silence so the total lands on the label-frame grid,
    # keeping frame-based feature counts and rounded label counts in step
    step_ms = round(1000.0 / cfg.label_rate_hz)
    if step_ms >= 1:
        total_ms = sum(d for _, d in row_specs) + sum(insert_ms.values())
        kind_last, dur_last = row_specs[-1]
        row_specs[-1] = (kind_last, dur_last + (-total_ms) % step_ms)

    rows = []
    spans = []  # (kind, start_ms, dur_ms) on the recording clock, silences included
    insertions = []
    meg_ms = 0
    chap_ms = 0
    for i, (kind, dur_ms) in enumerate(row_specs):
        if i > 0 and (i - 1) in insert_ms:
            gap = insert_ms[i - 1]
            spans.append(("silence", meg_ms, gap))
            insertions.append(
                SilenceInsertion(chapter_time_s=chap_ms / 1000.0, duration_s=gap / 1000.0)
            )
            meg_ms += gap
        rows.append(
            EventRow(
                kind=kind,
                timemeg_s=meg_ms / 1000.0,
                timechapter_s=chap_ms / 1000.0,
                duration_s=dur_ms / 1000.0,
            )
        )
        spans.append((kind, meg_ms, dur_ms))
        meg_ms += dur_ms
        chap_ms += dur_ms

    sr = cfg.sample_rate_hz
    chunks = []
    burst_idx = 0
    for kind, _, dur_ms in spans:
        n = round_half_away(dur_ms / 1000.0 * sr)
        if kind == "speech":
            rng = stream(cfg.seed, _WORLD_SPEECH, burst_idx)
            chunks.append(_bandlimited_burst(rng, n, sr, cfg.band_hz))
            burst_idx += 1
        else:
            chunks.append(np.zeros(n))
    samples = np.concatenate(chunks)

    # labels straight from the span list (frame centers inside speech spans)
    rate = cfg.label_rate_hz
    n_labels = round_half_away(meg_ms / 1000.0 * rate)
    labels = np.zeros(n_labels, dtype=np.uint8)
    for kind, start_ms, dur_ms in spans:
        if kind != "speech":
            continue
        i0 = max(0, int(np.ceil(start_ms / 1000.0 * rate - 0.5)))
        i1 = min(n_labels, int(np.ceil((start_ms + dur_ms) / 1000.0 * rate - 0.5)))
        labels[i0:i1] = 1

    return DetectionWorld(
        samples=samples,
        sample_rate_hz=sr,
        table=EventTable(rows=tuple(rows)),
        labels=LabelTimeline(rate_hz=rate, labels=labels),
        insertions=tuple(insertions),
    )
