"""Turn metadata records into model inputs and pad them into batches."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch

from ..errors import InputError
from ..metadata import SampleRecord, resolve_signal_path
from ..signal_io import DEFAULT_FPS, clip_temporal, load_signal, skip_frames
from .rendering import GlyphTable, default_glyph_table, render_word_images
from .tokenization import Vocabulary

IGNORE_INDEX = -100

# modality -> kind of signal referenced by the ``signal`` column
MODALITIES = {
    "text2text": None,
    "pose2text": "pose",
    "features2text": "features",
    "video2text": "video",
    "image2text": "image",
}


class UnknownModality(InputError):
    pass


class SampleError(InputError):
    """Processing failed for one record; ``row`` is its index in the split."""

    def __init__(self, row, cause):
        super().__init__(f"row {row}: {cause}")
        self.row = row
        self.cause = cause


class HeterogeneousBatch(InputError):
    pass


@dataclass
class ProcessorConfig:
    skip_frames_stride: int = 1
    fps_default: float = DEFAULT_FPS
    normalize_pose: bool = False
    image_height: int = 24
    image_width: int = 96
    image_scale: int = 2
    glyph_table: str | None = None
    base_dir: str | None = None

    def glyphs(self) -> GlyphTable:
        if self.glyph_table:
            return _load_glyphs(self.glyph_table)
        return default_glyph_table()


_GLYPH_CACHE: dict[str, GlyphTable] = {}


def _load_glyphs(path) -> GlyphTable:
    path = str(path)
    if path not in _GLYPH_CACHE:
        _GLYPH_CACHE[path] = GlyphTable.from_json(path)
    return _GLYPH_CACHE[path]


@dataclass(frozen=True, eq=False)
class TokenBlock:
    ids: tuple[int, ...]

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class FeatureBlock:
    features: np.ndarray  # [T, D] float32

    def __len__(self):
        return self.features.shape[0]


Block = Union[TokenBlock, FeatureBlock]


@dataclass(frozen=True, eq=False)
class ModelInput:
    """One processed sample. The encoder stream is an ordered list of
    blocks; single-signal modalities put the prompt block first."""

    encoder_blocks: tuple[Block, ...]
    decoder_prompt_tokens: tuple[int, ...]
    label_tokens: tuple[int, ...]
    source_index: int = 0

    def __post_init__(self):
        blocks = tuple(b for b in self.encoder_blocks if len(b))
        if not blocks:
            raise InputError(f"row {self.source_index}: empty encoder input")
        object.__setattr__(self, "encoder_blocks", blocks)
        object.__setattr__(self, "decoder_prompt_tokens", tuple(self.decoder_prompt_tokens))
        object.__setattr__(self, "label_tokens", tuple(self.label_tokens))

    @property
    def encoder_kind(self) -> str:
        return "features" if self.feature_blocks else "tokens"

    @property
    def feature_blocks(self) -> list[FeatureBlock]:
        return [b for b in self.encoder_blocks if isinstance(b, FeatureBlock)]

    @property
    def encoder_tokens(self) -> tuple[int, ...]:
        return tuple(i for b in self.encoder_blocks if isinstance(b, TokenBlock) for i in b.ids)

    @property
    def encoder_features(self) -> np.ndarray | None:
        feats = self.feature_blocks
        if not feats:
            return None
        return np.concatenate([b.features for b in feats], axis=0)

    @property
    def feature_dim(self) -> int | None:
        feats = self.feature_blocks
        return feats[0].features.shape[1] if feats else None

    @property
    def encoder_length(self) -> int:
        return sum(len(b) for b in self.encoder_blocks)

    def same_as(self, other: "ModelInput") -> bool:
        """Bit-level equality, including feature payloads."""
        if (self.decoder_prompt_tokens, self.label_tokens, self.source_index) != (
            other.decoder_prompt_tokens, other.label_tokens, other.source_index
        ):
            return False
        if len(self.encoder_blocks) != len(other.encoder_blocks):
            return False
        for a, b in zip(self.encoder_blocks, other.encoder_blocks):
            if type(a) is not type(b):
                return False
            if isinstance(a, TokenBlock) and a.ids != b.ids:
                return False
            if isinstance(a, FeatureBlock) and (
                a.features.dtype != b.features.dtype or a.features.tobytes() != b.features.tobytes()
                or a.features.shape != b.features.shape
            ):
                return False
        return True


def signal_features(path, kind: str, start_ms: int, end_ms: int,
                    config: ProcessorConfig) -> np.ndarray:
    """load -> clip -> subsample -> flatten to ``[T, D]`` float32."""
    seq = load_signal(path, kind, config.fps_default)
    seq = clip_temporal(seq, start_ms, end_ms)
    seq = skip_frames(seq, config.skip_frames_stride)
    feats = seq.to_features()
    if kind == "pose" and config.normalize_pose:
        mean = feats.mean(axis=0, keepdims=True)
        std = feats.std(axis=0, keepdims=True)
        feats = (feats - mean) / (std + np.float32(1e-6))
    return np.ascontiguousarray(feats, dtype=np.float32)


def decoder_prompt_ids(vocab: Vocabulary, decoder_prompt: str) -> list[int]:
    # an empty prompt starts decoding from the pad token
    return vocab.tokenize(decoder_prompt) or [vocab.pad_id]


def label_ids(vocab: Vocabulary, output: str) -> list[int]:
    ids = vocab.tokenize(output)
    return ids + [vocab.eos_id] if ids else []


def process_sample(record: SampleRecord, modality: str, vocab: Vocabulary,
                   config: ProcessorConfig | None = None, index: int = 0) -> ModelInput:
    config = config or ProcessorConfig()
    if modality not in MODALITIES:
        raise UnknownModality(f"unknown modality {modality!r}; registered: {sorted(MODALITIES)}")
    kind = MODALITIES[modality]
    try:
        prompt = TokenBlock(tuple(vocab.tokenize(record.encoder_prompt)))
        if kind is None:
            blocks = (TokenBlock(prompt.ids + tuple(vocab.tokenize(record.signal))),)
        elif kind == "image":
            images = render_word_images(record.signal, config.glyphs(), config.image_height,
                                        config.image_width, config.image_scale)
            blocks = (prompt, FeatureBlock(images.to_features()))
        else:
            path = resolve_signal_path(record.signal, config.base_dir)
            feats = signal_features(path, kind, record.signal_start, record.signal_end, config)
            blocks = (prompt, FeatureBlock(feats))
        return ModelInput(
            encoder_blocks=blocks,
            decoder_prompt_tokens=decoder_prompt_ids(vocab, record.decoder_prompt),
            label_tokens=label_ids(vocab, record.output),
            source_index=index,
        )
    except SampleError:
        raise
    except (InputError, OSError) as exc:
        raise SampleError(index, exc) from exc


def input_dim_for(modality: str, config: ProcessorConfig) -> int | None:
    """Feature width that doesn't require probing a file, if any."""
    if modality == "image2text":
        return config.image_height * config.image_width
    return None


# -- batching --------------------------------------------------------------

@dataclass
class Batch:
    encoder_tokens: torch.Tensor          # [B, S] long, pad where not a token
    encoder_features: torch.Tensor | None  # [B, T_max, D] float32
    feature_index: torch.Tensor           # [B, S] long, row into encoder_features
    is_feature: torch.Tensor              # [B, S] bool
    encoder_mask: torch.Tensor            # [B, S] bool, True = real position
    feature_mask: torch.Tensor | None     # [B, T_max] bool
    decoder_input: torch.Tensor           # [B, L] long
    labels: torch.Tensor                  # [B, L] long, IGNORE_INDEX where padded
    decoder_mask: torch.Tensor            # [B, L] bool
    encoder_lengths: torch.Tensor         # [B]
    source_indices: tuple[int, ...] = field(default=())

    def __len__(self):
        return self.encoder_tokens.shape[0]

    @property
    def num_targets(self) -> int:
        return int((self.labels != IGNORE_INDEX).sum())


def teacher_forcing(prompt: Sequence[int], labels: Sequence[int]) -> tuple[list[int], list[int]]:
    """Decoder inputs and aligned targets for ``prompt ++ labels``.

    The decoder sees the sequence shifted right; only label positions are
    scored, so all but the last prompt position get ``IGNORE_INDEX``.
    """
    full = list(prompt) + list(labels)
    inputs = full[:-1]
    targets = full[1:]
    n_ignored = max(len(prompt) - 1, 0)
    targets = [IGNORE_INDEX] * n_ignored + targets[n_ignored:]
    return inputs, targets


def collate(inputs: Sequence[ModelInput], vocab: Vocabulary | None = None) -> Batch:
    if not inputs:
        raise ValueError("cannot collate an empty list")
    pad_id = vocab.pad_id if vocab is not None else 0
    # token-only samples may share a batch with feature samples (mixed mode);
    # their feature rows stay zero and masked
    dims = {x.feature_dim for x in inputs} - {None}
    if len(dims) > 1:
        raise HeterogeneousBatch(f"batch mixes feature widths {sorted(dims)}")
    dim = dims.pop() if dims else None

    B = len(inputs)
    S = max(x.encoder_length for x in inputs)
    enc_tokens = torch.full((B, S), pad_id, dtype=torch.long)
    feat_index = torch.zeros((B, S), dtype=torch.long)
    is_feature = torch.zeros((B, S), dtype=torch.bool)
    enc_mask = torch.zeros((B, S), dtype=torch.bool)
    enc_lengths = torch.zeros(B, dtype=torch.long)

    features = feat_mask = None
    if dim is not None:
        T_max = max(x.encoder_features.shape[0] for x in inputs if x.feature_dim is not None)
        features = torch.zeros((B, T_max, dim), dtype=torch.float32)
        feat_mask = torch.zeros((B, T_max), dtype=torch.bool)

    for b, x in enumerate(inputs):
        pos = 0
        row = 0
        for block in x.encoder_blocks:
            n = len(block)
            if isinstance(block, TokenBlock):
                enc_tokens[b, pos:pos + n] = torch.tensor(block.ids, dtype=torch.long)
            else:
                features[b, row:row + n] = torch.from_numpy(block.features)
                feat_mask[b, row:row + n] = True
                feat_index[b, pos:pos + n] = torch.arange(row, row + n)
                is_feature[b, pos:pos + n] = True
                row += n
            pos += n
        enc_mask[b, :pos] = True
        enc_lengths[b] = pos

    pairs = [teacher_forcing(x.decoder_prompt_tokens, x.label_tokens) for x in inputs]
    L = max(len(inp) for inp, _ in pairs)
    dec_in = torch.full((B, L), pad_id, dtype=torch.long)
    labels = torch.full((B, L), IGNORE_INDEX, dtype=torch.long)
    dec_mask = torch.zeros((B, L), dtype=torch.bool)
    for b, (inp, tgt) in enumerate(pairs):
        dec_in[b, :len(inp)] = torch.tensor(inp, dtype=torch.long)
        labels[b, :len(tgt)] = torch.tensor(tgt, dtype=torch.long)
        dec_mask[b, :len(inp)] = True

    return Batch(
        encoder_tokens=enc_tokens,
        encoder_features=features,
        feature_index=feat_index,
        is_feature=is_feature,
        encoder_mask=enc_mask,
        feature_mask=feat_mask,
        decoder_input=dec_in,
        labels=labels,
        decoder_mask=dec_mask,
        encoder_lengths=enc_lengths,
        source_indices=tuple(x.source_index for x in inputs),
    )
