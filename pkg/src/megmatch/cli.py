"""Command-line pipeline: synth, train-encoder, embed, match, train-detector,
detect, score, events.

Exit codes: 0 success, 1 any error, 2 no-match (match only). Every command
re-run with the same flags and seed writes byte-identical files. A JSON
config file can supply defaults for any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import contrastive, corpus, detection, emb1, retrieval, synthgen
from .errors import LengthMismatchError, MegmatchError

PROG = "megmatch"


def _fmt(value):
    return float(value) if isinstance(value, (np.floating,)) else value


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _resolved(args, keys) -> dict:
    return {k: _fmt(getattr(args, k)) for k in keys}


def _read_corpus_dir(corpus_dir: Path):
    files = sorted(Path(corpus_dir).glob("*.emb1"))
    if not files:
        raise MegmatchError(f"no .emb1 files in {corpus_dir}")
    return [(f.stem, emb1.read_emb1(f)) for f in files]


# -- synth ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.world == "retrieval":
        cfg = synthgen.SynthConfig(
            seed=args.seed,
            n_books=args.books,
            segs_per_book=args.segs,
            dim=args.dim,
            rate_hz=args.rate,
            window_s=args.window,
            noise_sigma=args.noise_sigma,
            plant_book=args.plant_book,
            plant_offset_s=args.plant_offset,
        )
        library = synthgen.gen_library(cfg)
        lib_dir = out / "library"
        lib_dir.mkdir(exist_ok=True)
        books = []
        for book_id, seq in library:
            path = lib_dir / f"{book_id}.emb1"
            emb1.write_emb1(path, seq)
            books.append({"id": book_id, "file": f"library/{path.name}", "frames": seq.n_frames})
        query = synthgen.plant_query(cfg, library)
        emb1.write_emb1(out / "query.emb1", query)
        manifest = {
            "world": "retrieval",
            "config": _resolved(
                args,
                ["seed", "books", "segs", "dim", "rate", "window",
                 "noise_sigma", "plant_book", "plant_offset"],
            ),
            "books": books,
            "query_file": "query.emb1",
            "query_frames": query.n_frames,
        }
        _write_json(out / "manifest.json", manifest)
    else:
        cfg = synthgen.DetectionWorldConfig(
            seed=args.seed,
            n_sentences=args.sentences,
            n_insertions=args.insertions,
            sample_rate_hz=args.sample_rate,
            label_rate_hz=args.label_rate,
        )
        world = synthgen.gen_detection_world(cfg)
        detection.write_wav(out / "audio.wav", world.samples, int(world.sample_rate_hz))
        (out / "events.tsv").write_text(corpus.format_event_table(world.table))
        corpus.write_labels_csv(out / "labels.csv", world.labels)
        manifest = {
            "world": "detection",
            "config": _resolved(
                args, ["seed", "sentences", "insertions", "sample_rate", "label_rate"]
            ),
            "audio_file": "audio.wav",
            "events_file": "events.tsv",
            "labels_file": "labels.csv",
            "samples": int(world.samples.size),
            "insertions_generated": len(world.insertions),
        }
        _write_json(out / "manifest.json", manifest)
    return 0


# -- match ------------------------------------------------------------------------

def cmd_match(args) -> int:
    query = emb1.read_emb1(args.query)
    books = _read_corpus_dir(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid, mmis_list, matches = retrieval.match_books(
        query,
        books,
        window_s=args.window,
        stride_s=args.stride,
        las_threshold=args.threshold,
        threads=args.threads,
        strict=not args.non_strict,
    )
    by_id = {m.book_id: m for m in mmis_list}
    report_books = []
    for match in matches:
        mmis = by_id[match.book_id]
        csv_name = f"mmis_{match.book_id}.csv"
        lines = ["corpus_segment,query_window,score"]
        lines += [
            f"{j},{int(mmis.entries[j])},{mmis.scores[j]!r}" for j in range(len(mmis.entries))
        ]
        (out / csv_name).write_text("\n".join(lines) + "\n")
        report_books.append(
            {
                "book_id": match.book_id,
                "las_length": match.las.length,
                "offset_s": match.offset_s,
                "pairs": [[int(j), int(i)] for j, i in match.pairs],
                "mmis_file": csv_name,
            }
        )
    report = {
        "query_grid": {
            "window_s": grid.window_s,
            "stride_s": grid.stride_s,
            "count": grid.count,
            "rate_hz": grid.rate_hz,
        },
        "books": report_books,
        # threads is an execution detail: reports must not depend on it
        "config": _resolved(args, ["query", "corpus", "window", "stride", "threshold"]),
    }
    _write_json(out / "report.json", report)
    if args.figures > 0 and matches:
        from . import figures

        for match in matches[: args.figures]:
            figures.mmis_scatter(by_id[match.book_id], match, out / f"mmis_{match.book_id}.png")
    if not matches:
        print("no book exceeded the ascent threshold", file=sys.stderr)
        return 2
    best = matches[0]
    print(f"best match: {best.book_id} (ascent {best.las.length}, offset {best.offset_s:.3f}s)")
    return 0


# -- encoder training / application --------------------------------------------------

def _paired_files(meg_dir, speech_dir):
    meg_files = sorted(Path(meg_dir).glob("*.emb1"))
    speech_files = sorted(Path(speech_dir).glob("*.emb1"))
    if len(meg_files) != len(speech_files) or not meg_files:
        raise LengthMismatchError(
            f"{len(meg_files)} recordings vs {len(speech_files)} feature files"
        )
    return meg_files, speech_files


def cmd_train_encoder(args) -> int:
    meg_files, speech_files = _paired_files(args.meg, args.speech)
    meg = []
    for f in meg_files:
        seq = emb1.read_emb1(f)
        meg.append(corpus.MegRecording(data=seq.data, rate_hz=seq.rate_hz))
    speech = [emb1.read_emb1(f) for f in speech_files]
    cfg = contrastive.ContrastiveConfig(
        temperature=args.temperature,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        patience=args.patience,
        top_k_monitor=args.top_k,
    )
    encoder, history = contrastive.train_linear_encoder(
        meg, speech, args.val_split, cfg, args.seed, max_epochs=args.epochs
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    config = _resolved(
        args,
        ["temperature", "batch_size", "lr", "patience", "top_k", "val_split", "epochs"],
    )
    contrastive.save_encoder(out, encoder, args.seed, config)
    report_path = out.with_suffix(".report.json")
    _write_json(report_path, history)
    from . import figures

    figures.training_curves(history, "val_topk", out.with_suffix(".curves.png"))
    best = max(h["val_topk"] for h in history)
    print(f"trained encoder: {len(history)} epochs, best val top-{args.top_k} {best:.3f}")
    return 0


def cmd_embed(args) -> int:
    encoder, _ = contrastive.load_encoder(args.encoder)
    src = Path(args.input)
    dst = Path(args.out)
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        files = sorted(src.glob("*.emb1"))
        if not files:
            raise MegmatchError(f"no .emb1 files in {src}")
        for f in files:
            emb1.write_emb1(dst / f.name, encoder.encode(emb1.read_emb1(f)))
        print(f"embedded {len(files)} files")
    else:
        dst.parent.mkdir(parents=True, exist_ok=True)
        emb1.write_emb1(dst, encoder.encode(emb1.read_emb1(src)))
        print(f"embedded {src.name}")
    return 0


# -- detector training / inference -----------------------------------------------------

def _load_audio(args) -> tuple[np.ndarray, float]:
    samples, rate = detection.read_audio(args.audio)
    if rate == 0.0:
        if not args.sample_rate:
            raise MegmatchError("--sample-rate is required for raw sample files")
        rate = float(args.sample_rate)
    return samples, rate


def _labels_for_frames(table, rate_hz: float, n_frames: int) -> corpus.LabelTimeline:
    """Event-derived labels trimmed to the feature frame count."""
    end_needed = max((r.timemeg_s + r.duration_s for r in table.rows), default=0.0)
    total_s = max(n_frames / rate_hz, end_needed)
    full = corpus.labels_from_events(table, rate_hz, total_s)
    return corpus.LabelTimeline(rate_hz=rate_hz, labels=full.labels[:n_frames])


def cmd_train_detector(args) -> int:
    samples, sample_rate = _load_audio(args)
    fcfg = detection.FeatureConfig(frame_s=args.frame, n_mels=args.mels)
    features = detection.frame_features(samples, sample_rate, fcfg)
    table = corpus.parse_event_table(Path(args.events).read_text())
    labels = _labels_for_frames(table, features.rate_hz, features.n_frames)
    cfg = detection.DetectorConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        patience=args.patience,
        segment_s=args.segment,
    )
    clf, history = detection.train_detector(
        [features], [labels], args.val_split, cfg, args.seed, max_epochs=args.epochs
    )
    segments = detection.segment_pairs([features], [labels], cfg.segment_s)
    n_val = corpus.round_half_away(len(segments) * args.val_split)
    val = segments[len(segments) - n_val :]
    scores = np.concatenate([detection.sigmoid(clf.weight @ x + clf.bias) for x, _ in val])
    truth = np.concatenate([y for _, y in val])
    clf.threshold = detection.grid_search_threshold(scores, truth)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    detection.save_detector(out, clf, fcfg)
    _write_json(out.with_suffix(".report.json"), history)
    from . import figures

    figures.training_curves(history, "val_loss", out.with_suffix(".curves.png"))
    print(
        f"trained detector: {len(history)} epochs, threshold {clf.threshold:.2f}, "
        f"best val loss {min(h['val_loss'] for h in history):.4f}"
    )
    return 0


def cmd_detect(args) -> int:
    clf, fcfg = detection.load_detector(args.model)
    if clf.threshold is None:
        raise MegmatchError(f"{args.model}: checkpoint has no binarization threshold")
    samples, sample_rate = _load_audio(args)
    features = detection.frame_features(samples, sample_rate, fcfg)
    scores = clf.score(features)
    timeline = detection.binarize(scores, clf.threshold, rate_hz=features.rate_hz)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.write_labels_csv(out, timeline)
    print(f"wrote {len(timeline)} labels at {timeline.rate_hz:g} Hz")
    return 0


def cmd_score(args) -> int:
    pred = corpus.read_labels_csv(args.pred)
    truth = corpus.read_labels_csv(args.truth)
    metrics = detection.score_f1(pred, truth)
    print(json.dumps(metrics.as_dict(), indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "metrics.json", metrics.as_dict())
        from . import figures

        figures.timeline_strip(pred, truth, out / "timeline.png")
    return 0


# -- event-table utilities ----------------------------------------------------------

def cmd_events(args) -> int:
    table = corpus.parse_event_table(Path(args.table).read_text(), eps_time_s=args.eps)
    if args.action == "parse":
        insertions = corpus.derive_silence_insertions(table, eps_time_s=args.eps)
        summary = {
            "rows": len(table),
            "speech_rows": sum(1 for r in table.rows if r.kind == "speech"),
            "silence_rows": sum(1 for r in table.rows if r.kind == "silence"),
            "insertions": len(insertions),
            "inserted_total_s": sum(i.duration_s for i in insertions),
        }
        print(json.dumps(summary, indent=2))
        return 0
    if args.action == "derive":
        insertions = corpus.derive_silence_insertions(table, eps_time_s=args.eps)
        lines = ["chapter_time_s,duration_s"]
        lines += [f"{i.chapter_time_s!r},{i.duration_s!r}" for i in insertions]
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote {len(insertions)} insertions")
        return 0
    if args.action == "synthesize":
        chapter = corpus.read_labels_csv(args.chapter_labels)
        insertions = corpus.derive_silence_insertions(table, eps_time_s=args.eps)
        merged = corpus.synthesize_meg_timeline(chapter, insertions)
        corpus.write_labels_csv(args.out, merged)
        print(f"spliced {len(insertions)} silences: {len(chapter)} -> {len(merged)} frames")
        return 0
    # labels
    total = args.total
    if total is None:
        total = max((r.timemeg_s + r.duration_s for r in table.rows), default=0.0)
    timeline = corpus.labels_from_events(table, args.rate, total)
    corpus.write_labels_csv(args.out, timeline)
    print(f"wrote {len(timeline)} labels at {args.rate:g} Hz")
    return 0


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}
    parser.subcommands = registry  # used when re-applying config-file defaults

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of flag defaults (flags win)")
        registry[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic world on disk")
    p.add_argument("--out", required=True)
    p.add_argument("--world", choices=["retrieval", "detection"], default="retrieval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--books", type=int, default=10)
    p.add_argument("--segs", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--plant-book", type=int, default=0)
    p.add_argument("--plant-offset", type=float, default=0.0)
    p.add_argument("--sentences", type=int, default=40)
    p.add_argument("--insertions", type=int, default=20)
    p.add_argument("--sample-rate", type=float, default=16000.0)
    p.add_argument("--label-rate", type=float, default=50.0)

    p = add("match", cmd_match, "match a query stream against a corpus directory")
    p.add_argument("--query", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=retrieval.DEFAULT_WINDOW_S)
    p.add_argument("--stride", type=float, default=retrieval.DEFAULT_STRIDE_S)
    p.add_argument("--threshold", type=int, default=retrieval.DEFAULT_LAS_THRESHOLD)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--figures", type=int, default=8, help="render at most this many MMIS plots")
    p.add_argument("--non-strict", action="store_true", help="allow equal values to ascend")

    p = add("train-encoder", cmd_train_encoder, "fit the contrastive linear encoder")
    p.add_argument("--meg", required=True)
    p.add_argument("--speech", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-split", type=float, default=0.125)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.015)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--epochs", type=int, default=100)

    p = add("embed", cmd_embed, "apply an encoder to recording files")
    p.add_argument("--encoder", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("train-detector", cmd_train_detector, "fit the frame classifier and threshold")
    p.add_argument("--audio", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=float, default=0.0)
    p.add_argument("--val-split", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--segment", type=float, default=30.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--frame", type=float, default=0.02)
    p.add_argument("--mels", type=int, default=24)

    p = add("detect", cmd_detect, "binary speech/silence labels from audio")
    p.add_argument("--audio", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=float, default=0.0)

    p = add("score", cmd_score, "precision/recall/F1 of predicted labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)

    p = add("events", cmd_events, "event-table utilities")
    p.add_argument("action", choices=["parse", "derive", "synthesize", "labels"])
    p.add_argument("--table", required=True)
    p.add_argument("--eps", type=float, default=corpus.DEFAULT_EPS_TIME_S)
    p.add_argument("--out")
    p.add_argument("--chapter-labels")
    p.add_argument("--rate", type=float, default=corpus.DEFAULT_LABEL_RATE_HZ)
    p.add_argument("--total", type=float, default=None)

    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: list[str]):
    """Reparse with config-file values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if not config_path:
        return args
    overrides = json.loads(Path(config_path).read_text())
    fresh = build_parser()
    for sub in fresh.subcommands.values():
        valid = {action.dest for action in sub._actions}  # noqa: SLF001
        sub.set_defaults(**{k: v for k, v in overrides.items() if k in valid})
    return fresh.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_defaults(parser, argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except MegmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
