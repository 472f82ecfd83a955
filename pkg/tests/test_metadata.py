import warnings

import pytest
from hypothesis import given, settings, strategies as st

from mmh.metadata import (
    BadInteger,
    EmptyFile,
    InvalidField,
    MalformedHeader,
    MalformedRow,
    MetadataWarning,
    MissingColumn,
    MixedSplits,
    SampleRecord,
    SplitTable,
    concat_multitask,
    infer_split,
    parse_metadata_tsv,
    validate_records,
    write_metadata_tsv,
)

from helpers import write_rows

# rows shaped like the worked multitask examples: SLT, alignment and MT
EXAMPLE_ROWS = [
    ("/path/to/pose2.pose", 404, 514, "<slt> asl en", "", "Moving the stick adjusts the wing’s angle of attack."),
    ("/path/to/pose3.pose", 63, 88, "<slt> csl es", "", "El elevador ajusta el ángulo de ataque del avión."),
    ("/path/to/pose2.pose", 0, 4000, "<agn> asl en Hello everyone. Today’s weather...", "",
     "[00:00–00:02] Hello everyone. [00:02–00:04] Today’s weather is sunny..."),
    ("/path/to/pose3.pose", 63000, 88000, "<agn> csl es Me llamo Elisenda. Estudié...", "",
     "[00:01:03–00:01:10] Me llamo Elisenda. [00:01:10–00:01:28] Estudié..."),
    ("", 0, 0, "<mt> es en El gato se sienta en la estera.", "", "The cat sits on the mat."),
    ("", 0, 0, "<mt> fr de Je vous remercie pour votre aide.", "", "Vielen Dank für Ihre Hilfe."),
    ("/path/to/pose2.pose", 404, 514, "<aug> <slt> asl it", "", "Spostando il timone..."),
]


def example_table(split="train"):
    return SplitTable(split, tuple(SampleRecord(*r) for r in EXAMPLE_ROWS))


def test_roundtrip_example_rows(tmp_path):
    table = example_table()
    path = tmp_path / "train.tsv"
    write_metadata_tsv(table, path)
    back = parse_metadata_tsv(path)
    assert back.same_content(table)
    # and the file bytes are a fixed point
    first = path.read_bytes()
    write_metadata_tsv(back, path)
    assert path.read_bytes() == first


def test_parse_example_row_fields(tmp_path):
    path = write_rows(tmp_path / "train.tsv", [EXAMPLE_ROWS[0]])
    rec = parse_metadata_tsv(path)[0]
    assert rec.signal_start == 404 and rec.signal_end == 514
    assert rec.encoder_prompt == "<slt> asl en"
    assert rec.decoder_prompt == ""
    assert rec.has_clip


def test_empty_bounds_are_zero(tmp_path):
    path = write_rows(tmp_path / "test.tsv", [("", "", "", "<mt> es en hola", "", "hi")])
    table = parse_metadata_tsv(path)
    assert table.split_name == "test"
    assert table[0].signal_start == 0 and not table[0].has_clip


def test_crlf_and_bom(tmp_path):
    path = tmp_path / "train.tsv"
    text = "﻿signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\toutput\r\nx\t1\t2\ta\t\tb\r\n\n"
    path.write_bytes(text.encode("utf-8"))
    table = parse_metadata_tsv(path)
    assert table.records == (SampleRecord("x", 1, 2, "a", "", "b"),)


@pytest.mark.parametrize("content,error", [
    ("", EmptyFile),
    ("signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\toutput\n", EmptyFile),
    ("signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\nx\t\t\t\t\n", MissingColumn),
    ("output\tsignal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\nx\t\t\t\t\ty\n", MalformedHeader),
    ("signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\toutput\nx\t\t\t\ty\n", MalformedRow),
    ("signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\toutput\nx\t-3\t\t\t\ty\n", BadInteger),
    ("signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\toutput\nx\t1.5\t\t\t\ty\n", BadInteger),
])
def test_parse_errors(tmp_path, content, error):
    path = tmp_path / "train.tsv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(error):
        parse_metadata_tsv(path)


def test_missing_column_names_it(tmp_path):
    path = tmp_path / "train.tsv"
    path.write_text("signal\tsignal_start\tsignal_end\tencoder_prompt\tdecoder_prompt\nx\t\t\t\t\n")
    with pytest.raises(MissingColumn) as info:
        parse_metadata_tsv(path)
    assert info.value.name == "output"


def test_bad_integer_reports_row(tmp_path):
    rows = [("a", "", "", "", "", "b"), ("a", "x1", "", "", "", "b")]
    path = write_rows(tmp_path / "train.tsv", rows)
    with pytest.raises(BadInteger) as info:
        parse_metadata_tsv(path)
    assert info.value.row == 1 and info.value.column == "signal_start"


def test_newline_in_field_is_flattened_with_warning(tmp_path):
    table = SplitTable("train", (SampleRecord("", 0, 0, "a\nb", "", "c\r\nd"),))
    with pytest.warns(MetadataWarning):
        write_metadata_tsv(table, tmp_path / "train.tsv")
    rec = parse_metadata_tsv(tmp_path / "train.tsv")[0]
    assert rec.encoder_prompt == "a b" and rec.output == "c d"


def test_tab_in_field_rejected(tmp_path):
    table = SplitTable("train", (SampleRecord("", 0, 0, "a\tb", "", "c"),))
    with pytest.raises(InvalidField):
        write_metadata_tsv(table, tmp_path / "train.tsv")


@pytest.mark.parametrize("name,split", [
    ("train.tsv", "train"), ("validation.tsv", "validation"), ("dev.tsv", "validation"),
    ("my_test.tsv", "test"), ("data.tsv", "train"),
])
def test_infer_split(name, split):
    assert infer_split(name) == split


def test_concat_multitask_preserves_order():
    slt = SplitTable("train", tuple(SampleRecord(*r) for r in EXAMPLE_ROWS[:2]))
    mt = SplitTable("train", tuple(SampleRecord(*r) for r in EXAMPLE_ROWS[4:6]))
    joined = concat_multitask([slt, mt])
    assert joined.records == slt.records + mt.records
    with pytest.raises(MixedSplits):
        concat_multitask([slt, SplitTable("test", mt.records)])


def test_validate_reports_each_row(tmp_path):
    (tmp_path / "a.pose").write_bytes(b"")
    table = SplitTable("train", (
        SampleRecord("a.pose", 0, 0, "p", "", "ok"),
        SampleRecord("a.pose", 500, 400, "p", "", "end before start"),
        SampleRecord("missing.pose", 0, 0, "p", "", "x"),
        SampleRecord("a.txt", 0, 0, "p", "", "x"),
        SampleRecord("a.pose", 0, 0, "p", "", ""),
    ), str(tmp_path / "train.tsv"))
    report = validate_records(table, "pose2text")
    rows = sorted(v.row for v in report)
    assert rows == [1, 2, 3, 4]
    assert any("end before start" in v.message for v in report if v.row == 1)


def test_validate_test_split_allows_empty_output():
    table = SplitTable("test", (SampleRecord("", 0, 0, "<mt> es en hola", "", ""),))
    assert validate_records(table, "text2text") == []


field_text = st.text(
    alphabet=st.characters(blacklist_characters="\t\n\r", blacklist_categories=("Cs",)), max_size=30
)
records = st.builds(
    SampleRecord, field_text, st.integers(0, 10**7), st.integers(0, 10**7),
    field_text, field_text, field_text,
)


@settings(max_examples=60, deadline=None)
@given(st.lists(records, min_size=1, max_size=8))
def test_roundtrip_property(tmp_path_factory, recs):
    # leading whitespace would be fine, but a leading BOM on the first cell is stripped by design
    recs = [r for r in recs if not r.signal.startswith("﻿")] or [SampleRecord(output="x")]
    path = tmp_path_factory.mktemp("rt") / "train.tsv"
    table = SplitTable("train", tuple(recs))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        write_metadata_tsv(table, path)
    assert parse_metadata_tsv(path).same_content(table)
