"""Binary container for latent feature sequences ("EMB1").

Layout, little-endian: magic b"EMB1", u32 H, u32 T, f64 rate_hz, then H*T
f32 values row-major (one row per latent dimension). Used both for encoder
outputs and for raw multichannel recordings (rows = channels).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .similarity import EmbeddingSequence

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIId")


def write_emb1(path, seq: EmbeddingSequence) -> None:
    p = Path(path)
    payload = np.ascontiguousarray(seq.data, dtype="<f4")
    with open(p, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, seq.dim, seq.n_frames, float(seq.rate_hz)))
        fh.write(payload.tobytes())


def read_emb1(path) -> EmbeddingSequence:
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {p}: {exc}", path=str(p)) from exc
    if len(blob) < _HEADER.size:
        raise FileFormatError(f"{p}: truncated header", path=str(p))
    magic, h, t, rate = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FileFormatError(f"{p}: bad magic {magic!r}", path=str(p))
    expected = _HEADER.size + 4 * h * t
    if len(blob) != expected:
        raise FileFormatError(
            f"{p}: expected {expected} bytes for {h}x{t} payload, got {len(blob)}",
            path=str(p),
        )
    if h < 1 or t < 1 or not rate > 0:
        raise FileFormatError(f"{p}: invalid header (H={h}, T={t}, rate={rate})", path=str(p))
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, t)
    return EmbeddingSequence(data=data.astype(np.float64), rate_hz=rate)
