"""Exhaustive corpus-vs-query matching.

A query stream is cut into overlapping windows; every corpus item is cut
into non-overlapping segments of the same length. For each corpus segment
the best-matching query window index is recorded, giving one index sequence
per corpus item. A genuinely matching item produces indices that ascend in
time, so the longest strictly ascending subsequence separates the true item
from the rest, and the ascending pairs localize it in the query stream.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import round_half_away
from .errors import (
    BadConfigError,
    DimMismatchError,
    EmptyInputError,
    EmptyPairsError,
    EmptyPoolError,
    OffsetOutOfRangeError,
    RateMismatchError,
    ShapeMismatchError,
    StreamTooShortError,
)
from .similarity import EmbeddingSequence, sim_embeddings, zscore_rows

DEFAULT_WINDOW_S = 5.0
DEFAULT_STRIDE_S = 0.1
DEFAULT_LAS_THRESHOLD = 20


@dataclass(frozen=True)
class SegmentGrid:
    """Sliding-window layout: window i starts at i * stride_s."""

    window_s: float
    stride_s: float
    count: int
    rate_hz: float


@dataclass(frozen=True)
class Mmis:
    """Per-corpus-item sequence of best-matching query-window indices."""

    book_id: str
    entries: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", np.asarray(self.entries, dtype=np.int64))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        if self.entries.shape != self.scores.shape or self.entries.ndim != 1:
            raise ShapeMismatchError("entries and scores must be parallel 1-D arrays")


@dataclass(frozen=True)
class LasResult:
    length: int
    positions: tuple[int, ...]
    values: tuple[int, ...]


@dataclass(frozen=True)
class BookMatch:
    book_id: str
    las: LasResult
    offset_s: float
    pairs: tuple[tuple[int, int], ...]  # (corpus segment index, query window index)


def _frame_counts(rate_hz: float, window_s: float, stride_s: float) -> tuple[int, int]:
    if not window_s > 0 or not stride_s > 0:
        raise BadConfigError("window_s and stride_s must be positive")
    w = round_half_away(window_s * rate_hz)
    s = round_half_away(stride_s * rate_hz)
    if w < 2:
        raise BadConfigError(f"window of {window_s}s is under 2 frames at {rate_hz}Hz")
    if s < 1:
        raise BadConfigError(f"stride of {stride_s}s is under one frame at {rate_hz}Hz")
    return w, s


def window_count(n_frames: int, window_frames: int, stride_frames: int) -> int:
    """floor((T - W) / stride), bumped to 1 when the stream fits one window."""
    if n_frames < window_frames:
        raise StreamTooShortError(
            f"stream of {n_frames} frames shorter than window of {window_frames}"
        )
    count = (n_frames - window_frames) // stride_frames
    return max(count, 1)


def _window_matrix(stream: EmbeddingSequence, window_s: float, stride_s: float):
    """(count, H, W) z-scored window stack plus the grid, without list overhead."""
    w, s = _frame_counts(stream.rate_hz, window_s, stride_s)
    count = window_count(stream.n_frames, w, s)
    starts = np.arange(count) * s
    idx = starts[:, None] + np.arange(w)[None, :]
    stack = stream.data[:, idx].transpose(1, 0, 2)  # (count, H, W)
    grid = SegmentGrid(window_s=window_s, stride_s=stride_s, count=count, rate_hz=stream.rate_hz)
    return zscore_rows(np.ascontiguousarray(stack)), grid


def slide_windows(
    stream: EmbeddingSequence, window_s: float, stride_s: float
) -> tuple[list[EmbeddingSequence], SegmentGrid]:
    """Cut a stream into overlapping windows of round(window_s * rate) frames."""
    w, s = _frame_counts(stream.rate_hz, window_s, stride_s)
    count = window_count(stream.n_frames, w, s)
    windows = [
        EmbeddingSequence(data=stream.data[:, k * s : k * s + w], rate_hz=stream.rate_hz)
        for k in range(count)
    ]
    grid = SegmentGrid(window_s=window_s, stride_s=stride_s, count=count, rate_hz=stream.rate_hz)
    return windows, grid


def chop_segments(stream: EmbeddingSequence, window_s: float) -> list[EmbeddingSequence]:
    """Non-overlapping segments; the trailing remainder is dropped."""
    w, _ = _frame_counts(stream.rate_hz, window_s, window_s)
    n = stream.n_frames // w
    if n < 1:
        raise StreamTooShortError(
            f"stream of {stream.n_frames} frames shorter than segment of {w}"
        )
    return [
        EmbeddingSequence(data=stream.data[:, k * w : (k + 1) * w], rate_hz=stream.rate_hz)
        for k in range(n)
    ]


def _segment_matrix(stream: EmbeddingSequence, window_frames: int) -> np.ndarray:
    n = stream.n_frames // window_frames
    if n < 1:
        raise StreamTooShortError(
            f"stream of {stream.n_frames} frames shorter than segment of {window_frames}"
        )
    h = stream.dim
    stack = stream.data[:, : n * window_frames].reshape(h, n, window_frames).transpose(1, 0, 2)
    return zscore_rows(np.ascontiguousarray(stack))


def _mmis_from_stacks(book_id: str, seg_stack: np.ndarray, win_flat: np.ndarray) -> Mmis:
    """Argmax matching on pre-normalized stacks; one matrix multiply per item."""
    h = seg_stack.shape[1]
    seg_flat = seg_stack.reshape(seg_stack.shape[0], -1)
    sims = (seg_flat @ win_flat.T) / h
    entries = np.argmax(sims, axis=1)  # ties resolve to the lowest index
    scores = sims[np.arange(sims.shape[0]), entries]
    return Mmis(book_id=book_id, entries=entries, scores=scores)


def build_mmis(
    book_id: str,
    corpus_segments: list[EmbeddingSequence],
    query_windows: list[EmbeddingSequence],
) -> Mmis:
    """Best query-window index (and score) for each corpus segment."""
    if not query_windows or not corpus_segments:
        raise EmptyPoolError("need at least one corpus segment and one query window")
    dim, frames = query_windows[0].dim, query_windows[0].n_frames
    for seq in (*corpus_segments, *query_windows):
        if seq.dim != dim or seq.n_frames != frames:
            raise ShapeMismatchError(
                f"all sequences must be {dim}x{frames}, got {seq.dim}x{seq.n_frames}"
            )
    seg_stack = zscore_rows(np.stack([s.data for s in corpus_segments]))
    win_stack = zscore_rows(np.stack([w.data for w in query_windows]))
    win_flat = win_stack.reshape(win_stack.shape[0], -1)
    return _mmis_from_stacks(book_id, seg_stack, win_flat)


def _patience_end_lengths(entries: np.ndarray, strict: bool) -> np.ndarray:
    """len_end[i]: longest ascending run ending at i, via patience piles."""
    insert = bisect_left if strict else bisect_right
    tails: list[int] = []
    out = np.empty(len(entries), dtype=np.int64)
    for i, x in enumerate(entries):
        pos = insert(tails, x)
        if pos == len(tails):
            tails.append(x)
        else:
            tails[pos] = x
        out[i] = pos + 1
    return out


def las(entries, strict: bool = True) -> LasResult:
    """Longest ascending subsequence (strict by default), O(n log n).

    Among all maximum-length subsequences, returns the one whose position
    sequence is lexicographically smallest, for deterministic downstream use.
    """
    arr = np.asarray(entries, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptyInputError("las needs a non-empty 1-D integer sequence")
    # longest run *starting* at i = longest run ending at the mirrored
    # position of the reversed, negated sequence
    start_len = _patience_end_lengths(-arr[::-1], strict)[::-1]
    total = int(start_len.max())
    positions = []
    prev_val = None
    i = 0
    for remaining in range(total, 0, -1):
        while start_len[i] < remaining or (
            prev_val is not None
            and not (arr[i] > prev_val if strict else arr[i] >= prev_val)
        ):
            i += 1
        positions.append(i)
        prev_val = arr[i]
        i += 1
    return LasResult(
        length=total,
        positions=tuple(positions),
        values=tuple(int(arr[p]) for p in positions),
    )


def estimate_offset(
    match_pairs, corpus_window_s: float, query_stride_s: float
) -> float:
    """Median (lower middle) of per-pair query-minus-corpus start times."""
    pairs = list(match_pairs)
    if not pairs:
        raise EmptyPairsError("no match pairs to estimate an offset from")
    diffs = sorted(i * query_stride_s - j * corpus_window_s for j, i in pairs)
    return diffs[(len(diffs) - 1) // 2]


def rank_books(
    mmis_set: list[Mmis],
    las_threshold: int = DEFAULT_LAS_THRESHOLD,
    *,
    corpus_window_s: float = DEFAULT_WINDOW_S,
    query_stride_s: float = DEFAULT_STRIDE_S,
    strict: bool = True,
) -> list[BookMatch]:
    """Books whose ascending-subsequence length exceeds the threshold, best first.

    A threshold of 0 disables the filter (every ascent has length >= 1).
    """
    if las_threshold < 0:
        raise BadConfigError("las_threshold must be >= 0")
    matches = []
    for m in mmis_set:
        result = las(m.entries, strict=strict)
        if result.length > las_threshold:
            pairs = tuple(zip(result.positions, result.values))
            offset = estimate_offset(pairs, corpus_window_s, query_stride_s)
            matches.append(
                BookMatch(book_id=m.book_id, las=result, offset_s=offset, pairs=pairs)
            )
    matches.sort(key=lambda bm: (-bm.las.length, bm.book_id))
    return matches


def match_books(
    query_stream: EmbeddingSequence,
    books: list[tuple[str, EmbeddingSequence]],
    window_s: float = DEFAULT_WINDOW_S,
    stride_s: float = DEFAULT_STRIDE_S,
    las_threshold: int = DEFAULT_LAS_THRESHOLD,
    threads: int = 1,
    strict: bool = True,
) -> tuple[SegmentGrid, list[Mmis], list[BookMatch]]:
    """Match every book against one query stream.

    The query windows are normalized once and shared; books are processed
    in parallel when threads > 1, with results assembled in input order so
    the outcome is independent of scheduling.
    """
    win_stack, grid = _window_matrix(query_stream, window_s, stride_s)
    win_flat = win_stack.reshape(win_stack.shape[0], -1)
    w_frames, _ = _frame_counts(query_stream.rate_hz, window_s, stride_s)

    def one_book(item: tuple[str, EmbeddingSequence]) -> Mmis:
        book_id, stream = item
        if stream.dim != query_stream.dim:
            raise DimMismatchError(
                f"{book_id}: dim {stream.dim} != query dim {query_stream.dim}"
            )
        if stream.rate_hz != query_stream.rate_hz:
            raise RateMismatchError(
                f"{book_id}: rate {stream.rate_hz} != query rate {query_stream.rate_hz}"
            )
        return _mmis_from_stacks(book_id, _segment_matrix(stream, w_frames), win_flat)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mmis_list = list(pool.map(one_book, books))
    else:
        mmis_list = [one_book(b) for b in books]
    matches = rank_books(
        mmis_list,
        las_threshold,
        corpus_window_s=window_s,
        query_stride_s=stride_s,
        strict=strict,
    )
    return grid, mmis_list, matches


def confirm_sentences(
    sentence_embeddings: list[EmbeddingSequence],
    query_stream: EmbeddingSequence,
    offset_s: float,
    sim_threshold: float | None = None,
    seed: int = 0,
) -> list[bool]:
    """Check, sentence by sentence, whether the query stream carries them in order.

    Each sentence is compared against the query span predicted by the running
    sum of sentence durations from offset_s. Spans that run past the end of
    the stream are False. When sim_threshold is None it is set to the 99th
    percentile of 1000 time-shuffled null similarities drawn from the stream.
    """
    if not sentence_embeddings:
        raise EmptyPoolError("no sentences to confirm")
    if not 0 <= offset_s <= query_stream.duration_s:
        raise OffsetOutOfRangeError(
            f"offset {offset_s}s outside query stream of {query_stream.duration_s}s"
        )
    for s in sentence_embeddings:
        if s.dim != query_stream.dim:
            raise DimMismatchError(f"sentence dim {s.dim} != query dim {query_stream.dim}")
        if s.rate_hz != query_stream.rate_hz:
            raise RateMismatchError(
                f"sentence rate {s.rate_hz} != query rate {query_stream.rate_hz}"
            )
    rate = query_stream.rate_hz
    if sim_threshold is None:
        sim_threshold = _null_sim_threshold(sentence_embeddings, query_stream, seed)

    out = []
    cursor = offset_s
    for sent in sentence_embeddings:
        start = round_half_away(cursor * rate)
        stop = start + sent.n_frames
        if start < 0 or stop > query_stream.n_frames:
            out.append(False)
        else:
            span = EmbeddingSequence(
                data=query_stream.data[:, start:stop], rate_hz=rate
            )
            out.append(sim_embeddings(sent, span) >= sim_threshold)
        cursor += sent.duration_s
    return out


def _null_sim_threshold(
    sentences: list[EmbeddingSequence],
    query_stream: EmbeddingSequence,
    seed: int,
    draws: int = 1000,
    quantile: float = 0.99,
) -> float:
    """Null distribution: sentences vs frame-shuffled random query spans."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    usable = [s for s in sentences if s.n_frames <= query_stream.n_frames]
    if not usable:
        raise EmptyPoolError("every sentence is longer than the query stream")
    sims = np.empty(draws)
    for d in range(draws):
        sent = usable[d % len(usable)]
        start = int(rng.integers(0, query_stream.n_frames - sent.n_frames + 1))
        span = query_stream.data[:, start : start + sent.n_frames]
        shuffled = span[:, rng.permutation(sent.n_frames)]
        sims[d] = sim_embeddings(
            sent, EmbeddingSequence(data=shuffled, rate_hz=query_stream.rate_hz)
        )
    return float(np.quantile(sims, quantile))
