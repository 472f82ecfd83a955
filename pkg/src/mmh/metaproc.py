"""Mixed-modality inputs: free text with inline signal references.

A reference looks like ``<signal:PATH>`` or ``<signal:PATH#START-END>``
with START/END in milliseconds. ``\\<`` is a literal ``<`` and ``\\\\`` a
literal backslash; any other backslash is kept as is. The path runs up to
the first ``#`` or ``>``.

Text segments go through the tokenizer, signal segments through the
matching modality loader, and the results are kept in source order so the
model can place embedded tokens and mapped features exactly where the
text puts them.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from .errors import InputError
from .metadata import Violation, infer_split, read_tsv_rows, resolve_signal_path, write_tsv_rows
from .processors.sample import (
    FeatureBlock,
    ModelInput,
    ProcessorConfig,
    SampleError,
    TokenBlock,
    decoder_prompt_ids,
    label_ids,
    signal_features,
)
from .processors.tokenization import Vocabulary

OPEN = "<signal:"
MIXED_COLUMNS = ("encoder_input", "decoder_input", "label")
DEFAULT_REGISTRY = {".mmhpose": "pose", ".mmhfeat": "features", ".mmhvid": "video"}


class MalformedReference(InputError):
    def __init__(self, offset, message):
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class UnknownModality(InputError):
    def __init__(self, extension):
        super().__init__(f"no modality registered for extension {extension!r}")
        self.extension = extension


@dataclass(frozen=True)
class Text:
    content: str


@dataclass(frozen=True)
class Signal:
    path: str
    start_ms: int = 0
    end_ms: int = 0
    modality: str | None = None

    @property
    def extension(self) -> str:
        return Path(self.path).suffix.lower()


Segment = Union[Text, Signal]


@dataclass(frozen=True)
class MixedRecord:
    encoder_input: str
    decoder_input: str = ""
    label: str = ""


def modality_for(path: str, registry: dict | None = None) -> str | None:
    registry = DEFAULT_REGISTRY if registry is None else registry
    return registry.get(Path(path).suffix.lower())


def _parse_bounds(spec: str, offset: int) -> tuple[int, int]:
    start, dash, end = spec.partition("-")
    if not dash or not (start.isdigit() and start.isascii()) or not (end.isdigit() and end.isascii()):
        raise MalformedReference(offset, f"clip bounds must be START-END in ms, got {spec!r}")
    start, end = int(start), int(end)
    if end != 0 and end <= start:
        raise MalformedReference(offset, f"clip end {end} is not after start {start}")
    return start, end


def detect_signals(text: str, registry: dict | None = None) -> list[Segment]:
    segments: list[Segment] = []
    buf: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\" and i + 1 < n and text[i + 1] in "<\\":
            buf.append(text[i + 1])
            i += 2
            continue
        if ch == "<" and text.startswith(OPEN, i):
            close = text.find(">", i + len(OPEN))
            if close < 0:
                raise MalformedReference(i, "signal reference is never closed with '>'")
            body = text[i + len(OPEN):close]
            path, hash_, bounds = body.partition("#")
            if not path:
                raise MalformedReference(i, "signal reference has an empty path")
            start, end = _parse_bounds(bounds, i) if hash_ else (0, 0)
            if buf:
                segments.append(Text("".join(buf)))
                buf = []
            segments.append(Signal(path, start, end, modality_for(path, registry)))
            i = close + 1
            continue
        buf.append(ch)
        i += 1
    if buf:
        segments.append(Text("".join(buf)))
    return segments


def serialize_segments(segments: Sequence[Segment]) -> str:
    """Canonical text for ``segments``; ``detect_signals`` inverts it exactly."""
    out = []
    for seg in segments:
        if isinstance(seg, Text):
            out.append(seg.content.replace("\\", "\\\\").replace("<", "\\<"))
        else:
            bounds = f"#{seg.start_ms}-{seg.end_ms}" if (seg.start_ms or seg.end_ms) else ""
            out.append(f"{OPEN}{seg.path}{bounds}>")
    return "".join(out)


@dataclass(frozen=True, eq=False)
class AlignedStreams:
    blocks: tuple[Union[TokenBlock, FeatureBlock], ...]

    @property
    def total_length(self) -> int:
        return sum(len(b) for b in self.blocks)


@dataclass(frozen=True)
class Placement:
    position: int
    source: str  # "token" or "feature"
    block: int
    offset: int


def process_mixed(record: MixedRecord, vocab: Vocabulary, config: ProcessorConfig | None = None,
                  registry: dict | None = None, index: int = 0) -> ModelInput:
    config = config or ProcessorConfig()
    try:
        segments = detect_signals(record.encoder_input, registry)
    except MalformedReference as exc:
        raise SampleError(index, exc) from exc
    blocks = []
    for k, seg in enumerate(segments):
        if isinstance(seg, Text):
            ids = vocab.tokenize(seg.content)
            if ids:
                blocks.append(TokenBlock(tuple(ids)))
            continue
        if seg.modality is None:
            raise UnknownModality(seg.extension)
        path = resolve_signal_path(seg.path, config.base_dir)
        try:
            feats = signal_features(path, seg.modality, seg.start_ms, seg.end_ms, config)
        except (InputError, OSError) as exc:
            raise SampleError(index, f"segment {k} ({seg.path}): {exc}") from exc
        blocks.append(FeatureBlock(feats))
    return ModelInput(
        encoder_blocks=tuple(blocks),
        decoder_prompt_tokens=decoder_prompt_ids(vocab, record.decoder_input),
        label_tokens=label_ids(vocab, record.label),
        source_index=index,
    )


def aligned_streams(model_input: ModelInput) -> AlignedStreams:
    return AlignedStreams(model_input.encoder_blocks)


def assemble_encoder_embedding_plan(streams: AlignedStreams) -> list[Placement]:
    plan = []
    pos = 0
    for b, block in enumerate(streams.blocks):
        source = "token" if isinstance(block, TokenBlock) else "feature"
        for off in range(len(block)):
            plan.append(Placement(pos, source, b, off))
            pos += 1
    return plan


# -- mixed-mode metadata -----------------------------------------------------

@dataclass(frozen=True)
class MixedTable:
    split_name: str
    records: tuple[MixedRecord, ...]
    source_path: str = ""

    def __len__(self):
        return len(self.records)


def parse_mixed_tsv(path, split_name: str | None = None) -> MixedTable:
    rows = read_tsv_rows(path, MIXED_COLUMNS)
    records = tuple(MixedRecord(*cells) for cells in rows)
    return MixedTable(split_name or infer_split(path), records, str(path))


def write_mixed_tsv(table: MixedTable, path) -> None:
    write_tsv_rows(path, MIXED_COLUMNS,
                   ([r.encoder_input, r.decoder_input, r.label] for r in table.records))


def validate_mixed(table: MixedTable, registry: dict | None = None, check_files: bool = True):
    base_dir = Path(table.source_path).parent if table.source_path else None
    report = []
    for i, rec in enumerate(table.records):
        if not rec.encoder_input:
            report.append(Violation(i, "empty encoder_input"))
            continue
        if not rec.label and table.split_name != "test":
            report.append(Violation(i, f"empty label in {table.split_name} split"))
        try:
            segments = detect_signals(rec.encoder_input, registry)
        except MalformedReference as exc:
            report.append(Violation(i, str(exc)))
            continue
        for seg in segments:
            if not isinstance(seg, Signal):
                continue
            if seg.modality is None:
                report.append(Violation(i, f"no modality registered for {seg.extension!r}"))
            elif check_files and not resolve_signal_path(seg.path, base_dir).is_file():
                report.append(Violation(i, f"missing signal file {seg.path!r}"))
    return report
