"""Standardized TSV dataset metadata.

Every split of a dataset is one UTF-8 TSV file with a fixed header::

    signal  signal_start  signal_end  encoder_prompt  decoder_prompt  output

``signal`` holds raw text or a path to a signal file. ``signal_start`` and
``signal_end`` are clip bounds in milliseconds, ``0`` meaning unset; a
record with ``0/0`` uses the whole signal.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError

COLUMNS = ("signal", "signal_start", "signal_end", "encoder_prompt", "decoder_prompt", "output")
INTEGER_COLUMNS = ("signal_start", "signal_end")
SPLITS = ("train", "validation", "test")

# modality name -> file extensions accepted in the ``signal`` column
SIGNAL_EXTENSIONS = {
    "pose2text": (".mmhpose", ".pose", ".json"),
    "features2text": (".mmhfeat", ".json"),
    "video2text": (".mmhvid", ".json"),
}
TEXT_SIGNAL_MODALITIES = ("text2text", "image2text")


class MetadataError(InputError):
    pass


class EmptyFile(MetadataError):
    def __init__(self, path):
        super().__init__(f"{path}: no data rows")
        self.path = path


class MissingColumn(MetadataError):
    def __init__(self, name, path=None):
        super().__init__(f"{path or '<tsv>'}: missing column {name!r}")
        self.name = name


class MalformedHeader(MetadataError):
    pass


class MalformedRow(MetadataError):
    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class BadInteger(MetadataError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}: column {column!r} is not a non-negative integer: {value!r}")
        self.row = row
        self.column = column


class MixedSplits(MetadataError):
    pass


class InvalidField(MetadataError):
    pass


class MetadataWarning(UserWarning):
    """A value was altered to fit the TSV format on write."""


@dataclass(frozen=True)
class SampleRecord:
    signal: str = ""
    signal_start: int = 0
    signal_end: int = 0
    encoder_prompt: str = ""
    decoder_prompt: str = ""
    output: str = ""

    @property
    def has_clip(self) -> bool:
        return not (self.signal_start == 0 and self.signal_end == 0)


@dataclass(frozen=True)
class SplitTable:
    split_name: str
    records: tuple[SampleRecord, ...] = ()
    source_path: str = ""

    def __post_init__(self):
        if self.split_name not in SPLITS:
            raise MetadataError(f"unknown split {self.split_name!r}; expected one of {SPLITS}")
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def same_content(self, other: "SplitTable") -> bool:
        return self.split_name == other.split_name and self.records == other.records


def infer_split(path) -> str:
    """Guess the split from a file name, defaulting to ``train``."""
    stem = Path(path).stem.lower()
    for token in ("validation", "valid", "val", "dev"):
        if token in stem:
            return "validation"
    if "test" in stem:
        return "test"
    return "train"


# -- generic TSV plumbing, shared with the mixed-modality schema ----------

def read_tsv_rows(path, columns: Sequence[str]) -> list[list[str]]:
    """Read a headed TSV file into raw string cells, checking the header."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]
    if not lines:
        raise EmptyFile(path)
    header = lines[0].lstrip("\ufeff").split("\t")
    for name in columns:
        if name not in header:
            raise MissingColumn(name, path)
    if tuple(header) != tuple(columns):
        raise MalformedHeader(
            f"{path}: header must be exactly {'<TAB>'.join(columns)!r}, got {lines[0]!r}"
        )
    rows = []
    for lineno, line in enumerate(lines[1:]):
        # trailing blank lines are tolerated, interior ones are not
        if line == "" and all(rest == "" for rest in lines[1 + lineno:]):
            break
        cells = line.split("\t")
        if len(cells) != len(columns):
            raise MalformedRow(
                lineno, f"expected {len(columns)} tab-separated cells, found {len(cells)}"
                " (tabs inside fields are not supported)"
            )
        rows.append(cells)
    if not rows:
        raise EmptyFile(path)
    return rows


def sanitize_cell(value: str, where: str) -> str:
    if "\t" in value:
        raise InvalidField(f"{where}: tab characters cannot be stored in a TSV field")
    if "\n" in value or "\r" in value:
        warnings.warn(f"{where}: newline replaced by a space", MetadataWarning, stacklevel=3)
        value = value.replace("\r\n", " ").replace("\n", " ").replace("\r", " ")
    return value


def write_tsv_rows(path, columns: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    lines = ["\t".join(columns)]
    for i, row in enumerate(rows):
        cells = [sanitize_cell(str(v), f"row {i}, column {c!r}") for c, v in zip(columns, row)]
        lines.append("\t".join(cells))
    data = "\n".join(lines) + "\n"
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


# -- the six-column schema -------------------------------------------------

def _parse_int(cell: str, row: int, column: str) -> int:
    cell = cell.strip()
    if cell == "":
        return 0
    if not cell.isdigit() or not cell.isascii():
        raise BadInteger(row, column, cell)
    return int(cell)


def _int_cell(value: int) -> str:
    return str(value) if value else ""


def parse_metadata_tsv(path, split_name: str | None = None) -> SplitTable:
    """Parse one split file. Record order is exactly the on-disk order."""
    rows = read_tsv_rows(path, COLUMNS)
    records = []
    for i, cells in enumerate(rows):
        values = dict(zip(COLUMNS, cells))
        for col in INTEGER_COLUMNS:
            values[col] = _parse_int(values[col], i, col)
        records.append(SampleRecord(**values))
    return SplitTable(split_name or infer_split(path), tuple(records), str(path))


def write_metadata_tsv(table: SplitTable, path) -> None:
    """Write ``table`` so that :func:`parse_metadata_tsv` reproduces it.

    Newlines inside fields become single spaces (a :class:`MetadataWarning`
    is emitted); tabs are rejected.
    """
    rows = (
        [r.signal, _int_cell(r.signal_start), _int_cell(r.signal_end),
         r.encoder_prompt, r.decoder_prompt, r.output]
        for r in table.records
    )
    write_tsv_rows(path, COLUMNS, rows)


def concat_multitask(tables: Sequence[SplitTable]) -> SplitTable:
    """Concatenate same-split tables from several tasks, in argument order."""
    if not tables:
        raise MetadataError("nothing to concatenate")
    splits = {t.split_name for t in tables}
    if len(splits) > 1:
        raise MixedSplits(f"cannot concatenate different splits: {sorted(splits)}")
    if len(tables) == 1:
        return tables[0]
    records = tuple(r for t in tables for r in t.records)
    return SplitTable(tables[0].split_name, records, "")


# -- validation ------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    row: int
    message: str

    def __str__(self):
        return f"row {self.row}: {self.message}"


def resolve_signal_path(signal: str, base_dir=None) -> Path:
    """Relative signal paths are taken relative to the metadata file."""
    p = Path(signal)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def validate_records(table: SplitTable, modality: str, check_files: bool = True,
                     extensions: dict | None = None) -> list[Violation]:
    """Report every invariant breach in ``table``; never raises."""
    extensions = SIGNAL_EXTENSIONS if extensions is None else extensions
    base_dir = Path(table.source_path).parent if table.source_path else None
    report = []
    for i, rec in enumerate(table.records):
        if rec.signal_end != 0 and rec.signal_end <= rec.signal_start:
            report.append(Violation(i, "end before start"))
        if not rec.signal and not rec.encoder_prompt:
            report.append(Violation(i, "no input: signal and encoder_prompt are both empty"))
        if not rec.output and table.split_name != "test":
            report.append(Violation(i, f"empty output in {table.split_name} split"))
        if modality in TEXT_SIGNAL_MODALITIES:
            if modality == "image2text" and not rec.signal:
                report.append(Violation(i, "image2text requires signal text to render"))
            continue
        if modality not in extensions:
            report.append(Violation(i, f"unknown modality {modality!r}"))
            continue
        if not rec.signal:
            report.append(Violation(i, f"{modality} requires a signal file"))
            continue
        if not rec.signal.lower().endswith(tuple(extensions[modality])):
            report.append(Violation(
                i, f"signal {rec.signal!r} does not have a {modality} extension {extensions[modality]}"
            ))
        elif check_files and not resolve_signal_path(rec.signal, base_dir).is_file():
            report.append(Violation(i, f"missing signal file {rec.signal!r}"))
    return report
