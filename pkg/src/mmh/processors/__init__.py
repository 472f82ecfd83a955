"""Modality processors: tokenization, word rendering, sample processing, collation."""
from .rendering import GlyphTable, default_glyph_table, render_word_images
from .sample import (
    IGNORE_INDEX,
    MODALITIES,
    Batch,
    FeatureBlock,
    HeterogeneousBatch,
    ModelInput,
    ProcessorConfig,
    SampleError,
    TokenBlock,
    UnknownModality,
    collate,
    process_sample,
    signal_features,
)
from .tokenization import (
    EmptyCorpus,
    Vocabulary,
    build_vocabulary,
    detokenize,
    extend_vocabulary,
    normalize,
    pretokenize,
    tokenize,
)

__all__ = [
    "Batch", "EmptyCorpus", "FeatureBlock", "GlyphTable", "HeterogeneousBatch", "IGNORE_INDEX",
    "MODALITIES", "ModelInput", "ProcessorConfig", "SampleError", "TokenBlock", "UnknownModality",
    "Vocabulary", "build_vocabulary", "collate", "default_glyph_table", "detokenize",
    "extend_vocabulary", "normalize", "pretokenize", "process_sample", "render_word_images",
    "signal_features", "tokenize",
]
