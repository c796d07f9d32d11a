"""Contrastive retrieval of a neural-signal stream against a segmented
audio-embedding corpus, plus frame-level speech/silence detection."""

from .contrastive import (
    ContrastiveConfig,
    LinearEncoder,
    infonce_grad,
    infonce_loss,
    topk_accuracy,
    train_linear_encoder,
)
from .corpus import (
    EventRow,
    EventTable,
    LabelTimeline,
    MegRecording,
    SilenceInsertion,
    assemble_sentence_timeline,
    derive_silence_insertions,
    labels_from_events,
    parse_event_table,
    synthesize_meg_timeline,
)
from .detection import (
    DetectionMetrics,
    DetectorConfig,
    FeatureConfig,
    FeatureFrames,
    FrameClassifier,
    binarize,
    frame_features,
    grid_search_threshold,
    neg_pearson_loss,
    score_f1,
    train_detector,
)
from .emb1 import read_emb1, write_emb1
from .retrieval import (
    BookMatch,
    LasResult,
    Mmis,
    SegmentGrid,
    build_mmis,
    chop_segments,
    confirm_sentences,
    estimate_offset,
    las,
    match_books,
    rank_books,
    slide_windows,
)
from .similarity import (
    EmbeddingSequence,
    SimilarityMatrix,
    pearson,
    sim_embeddings,
    similarity_matrix,
    top_k,
)
from .synthgen import (
    DetectionWorld,
    DetectionWorldConfig,
    SynthConfig,
    gen_detection_world,
    gen_library,
    gen_training_pairs,
    plant_query,
)

__version__ = "0.1.0"
