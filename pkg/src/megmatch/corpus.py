"""Recordings, event tables, inserted silences, and binary label timelines.

An event table carries two clocks per row: the time at which the event
occurred in the recording ("timemeg") and the time of the same content in
the original chapter audio ("timechapter"). The recording clock only ever
gains time relative to the chapter clock, because extra silence was spliced
into the stimulus; those splices are recoverable from the per-row deltas.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InsertionOutOfRangeError,
    LengthMismatchError,
    MalformedNumberError,
    MissingColumnError,
    NonMonotonicTimeError,
    RateMismatchError,
    TotalTooShortError,
)

DEFAULT_EPS_TIME_S = 1e-3  # sub-millisecond clock discrepancies are file noise
DEFAULT_LABEL_RATE_HZ = 50.0

EVENT_COLUMNS = ("kind", "timemeg", "timechapter", "duration")
KINDS = ("speech", "silence")


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero (applied per quantity)."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


@dataclass(frozen=True)
class MegRecording:
    """Multichannel recording: C-by-T sample matrix at a fixed rate."""

    data: np.ndarray
    rate_hz: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"recording data must be a non-empty 2-D matrix, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("recording contains non-finite values")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class EventRow:
    kind: str
    timemeg_s: float
    timechapter_s: float
    duration_s: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.timemeg_s < 0 or self.timechapter_s < 0 or self.duration_s < 0:
            raise ValueError("event times and durations must be non-negative")


@dataclass(frozen=True)
class EventTable:
    rows: tuple[EventRow, ...]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class SilenceInsertion:
    """Extra silence spliced into the recording, located in chapter time."""

    chapter_time_s: float
    duration_s: float

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("insertion duration must be positive")
        if self.chapter_time_s < 0:
            raise ValueError("insertion position must be non-negative")


@dataclass(frozen=True)
class LabelTimeline:
    """Binary speech(1)/silence(0) sequence at a fixed label rate."""

    rate_hz: float
    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels, dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError("labels must be 1-D")
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise ValueError("labels must be 0 or 1")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "labels", arr)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate_hz


def validate_event_table(table: EventTable, eps_time_s: float = DEFAULT_EPS_TIME_S) -> None:
    """Check the monotonic-clock invariants; 1-based row index on failure."""
    rows = table.rows
    for i in range(1, len(rows)):
        prev, cur = rows[i - 1], rows[i]
        if cur.timemeg_s < prev.timemeg_s:
            raise NonMonotonicTimeError(
                f"timemeg decreases at row {i + 1}: {prev.timemeg_s} -> {cur.timemeg_s}",
                row_index=i + 1,
            )
        if cur.timechapter_s < prev.timechapter_s:
            raise NonMonotonicTimeError(
                f"timechapter decreases at row {i + 1}: "
                f"{prev.timechapter_s} -> {cur.timechapter_s}",
                row_index=i + 1,
            )
        d_meg = cur.timemeg_s - prev.timemeg_s
        d_chap = cur.timechapter_s - prev.timechapter_s
        if d_meg < d_chap - eps_time_s:
            raise NonMonotonicTimeError(
                f"recording clock loses {d_chap - d_meg:.6f}s of chapter content "
                f"at row {i + 1}",
                row_index=i + 1,
            )


def parse_event_table(tsv_text: str, eps_time_s: float = DEFAULT_EPS_TIME_S) -> EventTable:
    """Parse a tab-separated event table; column order is free, names are not."""
    lines = [ln for ln in tsv_text.splitlines() if ln.strip()]
    if not lines:
        raise MissingColumnError("empty event table: no header line")
    header = [c.strip() for c in lines[0].split("\t")]
    col = {}
    for name in EVENT_COLUMNS:
        if name not in header:
            raise MissingColumnError(f"missing column {name!r} in header {header}")
        col[name] = header.index(name)

    rows = []
    for i, line in enumerate(lines[1:], start=1):
        fields = line.split("\t")
        if len(fields) < len(header):
            raise MalformedNumberError(f"row {i}: expected {len(header)} fields, got {len(fields)}")
        kind = fields[col["kind"]].strip()
        if kind not in KINDS:
            raise MalformedNumberError(f"row {i}: unknown kind {kind!r}")
        values = {}
        for name in ("timemeg", "timechapter", "duration"):
            raw = fields[col[name]].strip()
            try:
                values[name] = float(raw)
            except ValueError:
                raise MalformedNumberError(f"row {i}: cannot parse {name}={raw!r}") from None
            if not math.isfinite(values[name]):
                raise MalformedNumberError(f"row {i}: non-finite {name}={raw!r}")
        rows.append(
            EventRow(
                kind=kind,
                timemeg_s=values["timemeg"],
                timechapter_s=values["timechapter"],
                duration_s=values["duration"],
            )
        )
    table = EventTable(rows=tuple(rows))
    validate_event_table(table, eps_time_s)
    return table


def format_event_table(table: EventTable) -> str:
    """Serialize to the tab-separated layout parse_event_table accepts."""
    out = ["\t".join(EVENT_COLUMNS)]
    for r in table.rows:
        out.append(f"{r.kind}\t{r.timemeg_s!r}\t{r.timechapter_s!r}\t{r.duration_s!r}")
    return "\n".join(out) + "\n"


def derive_silence_insertions(
    table: EventTable, eps_time_s: float = DEFAULT_EPS_TIME_S
) -> list[SilenceInsertion]:
    """Recover spliced silences from consecutive-row clock deltas.

    A pair of rows where the recording clock advanced more than the chapter
    clock (beyond eps_time_s) marks extra silence of exactly that difference,
    placed at the later row's chapter position.
    """
    if eps_time_s < 0:
        raise ValueError("eps_time_s must be non-negative")
    validate_event_table(table, eps_time_s)
    out = []
    rows = table.rows
    for i in range(1, len(rows)):
        d_meg = rows[i].timemeg_s - rows[i - 1].timemeg_s
        d_chap = rows[i].timechapter_s - rows[i - 1].timechapter_s
        gain = d_meg - d_chap
        if gain > eps_time_s:
            out.append(
                SilenceInsertion(
                    chapter_time_s=rows[i - 1].timechapter_s + d_chap,
                    duration_s=gain,
                )
            )
    out.sort(key=lambda ins: ins.chapter_time_s)
    return out


def synthesize_meg_timeline(
    chapter: LabelTimeline, insertions: list[SilenceInsertion]
) -> LabelTimeline:
    """Splice zero-labels into a chapter timeline at the given positions.

    Positions are chapter-time coordinates; each insertion contributes
    round(duration * rate) zeros. Surviving frames are untouched.
    """
    n = len(chapter)
    rate = chapter.rate_hz
    parts = []
    cursor = 0
    prev_pos = -1
    for ins in insertions:
        if ins.chapter_time_s > chapter.duration_s:
            raise InsertionOutOfRangeError(
                f"insertion at {ins.chapter_time_s}s beyond chapter of {chapter.duration_s}s"
            )
        pos = min(round_half_away(ins.chapter_time_s * rate), n)
        if pos < prev_pos:
            raise ValueError("insertions must be sorted by chapter_time_s")
        prev_pos = pos
        parts.append(chapter.labels[cursor:pos])
        parts.append(np.zeros(round_half_away(ins.duration_s * rate), dtype=np.uint8))
        cursor = pos
    parts.append(chapter.labels[cursor:])
    return LabelTimeline(rate_hz=rate, labels=np.concatenate(parts) if parts else chapter.labels)


def labels_from_events(
    table: EventTable, rate_hz: float, total_s: float
) -> LabelTimeline:
    """Binary timeline over [0, total_s): 1 where a frame center lies in a speech row."""
    if not rate_hz > 0:
        raise ValueError("rate_hz must be positive")
    end_needed = max((r.timemeg_s + r.duration_s for r in table.rows), default=0.0)
    if total_s < end_needed:
        raise TotalTooShortError(f"total_s={total_s} < last event end {end_needed}")
    n = round_half_away(total_s * rate_hz)
    labels = np.zeros(n, dtype=np.uint8)
    for r in table.rows:
        if r.kind != "speech":
            continue
        # frame i has center (i + 0.5)/rate; mark centers in [start, end)
        i0 = max(0, math.ceil(r.timemeg_s * rate_hz - 0.5))
        i1 = min(n, math.ceil((r.timemeg_s + r.duration_s) * rate_hz - 0.5))
        if i1 > i0:
            labels[i0:i1] = 1
    return LabelTimeline(rate_hz=rate_hz, labels=labels)


def assemble_sentence_timeline(
    sentences: list[LabelTimeline], gaps_s: list[float]
) -> LabelTimeline:
    """Concatenate sentence timelines with zero-label gaps between them.

    len(gaps_s) is either len(sentences) - 1 (gaps strictly between) or
    len(sentences) + 1 (leading and trailing gaps included).
    """
    if not sentences:
        raise LengthMismatchError("need at least one sentence timeline")
    rate = sentences[0].rate_hz
    for s in sentences[1:]:
        if s.rate_hz != rate:
            raise RateMismatchError(f"sentence rate {s.rate_hz} != {rate}")
    n = len(sentences)
    if len(gaps_s) == n - 1:
        leading, between, trailing = None, gaps_s, None
    elif len(gaps_s) == n + 1:
        leading, between, trailing = gaps_s[0], gaps_s[1:-1], gaps_s[-1]
    else:
        raise LengthMismatchError(
            f"{len(gaps_s)} gaps do not fit {n} sentences (need {n - 1} or {n + 1})"
        )

    def zeros_for(gap: float) -> np.ndarray:
        return np.zeros(round_half_away(gap * rate), dtype=np.uint8)

    parts = []
    if leading is not None:
        parts.append(zeros_for(leading))
    for i, s in enumerate(sentences):
        parts.append(s.labels)
        if i < len(between):
            parts.append(zeros_for(between[i]))
    if trailing is not None:
        parts.append(zeros_for(trailing))
    return LabelTimeline(rate_hz=rate, labels=np.concatenate(parts))


# -- file formats --------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_labels_csv(path, timeline: LabelTimeline) -> None:
    """CSV of frame,label plus a sidecar JSON recording rate and frame count."""
    p = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "label"])
    for i, v in enumerate(timeline.labels):
        writer.writerow([i, int(v)])
    p.write_text(buf.getvalue())
    _sidecar_path(p).write_text(
        json.dumps({"rate_hz": timeline.rate_hz, "frames": len(timeline)}) + "\n"
    )


def read_labels_csv(path) -> LabelTimeline:
    p = Path(path)
    meta = json.loads(_sidecar_path(p).read_text())
    rows = p.read_text().splitlines()
    if not rows or rows[0] != "frame,label":
        raise LengthMismatchError(f"{p}: expected 'frame,label' header")
    labels = np.array([int(r.split(",")[1]) for r in rows[1:]], dtype=np.uint8)
    if len(labels) != int(meta["frames"]):
        raise LengthMismatchError(
            f"{p}: {len(labels)} rows but sidecar says {meta['frames']} frames"
        )
    return LabelTimeline(rate_hz=float(meta["rate_hz"]), labels=labels)
