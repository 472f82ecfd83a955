import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmh.metadata import SampleRecord
from mmh.metaproc import (
    MalformedReference,
    MixedRecord,
    MixedTable,
    Signal,
    Text,
    UnknownModality,
    aligned_streams,
    assemble_encoder_embedding_plan,
    detect_signals,
    parse_mixed_tsv,
    process_mixed,
    serialize_segments,
    validate_mixed,
    write_mixed_tsv,
)
from mmh.processors import FeatureBlock, ProcessorConfig, TokenBlock, build_vocabulary, process_sample
from mmh.signal_io import PoseSequence, save_pose

from helpers import reference_oracle

GOLDEN = [
    "plain text only",
    "",
    "<signal:a.mmhpose>",
    "see <signal:a.mmhpose> now",
    "<signal:a.mmhpose#100-200>",
    "clip <signal:dir/b.mmhfeat#0-4000> and <signal:c.mmhvid>",
    "back to back <signal:a.mmhpose><signal:b.mmhpose>",
    "open end <signal:a.mmhpose#500-0>",
    r"escaped \<signal:a.mmhpose> stays text",
    r"double \\<signal:a.mmhpose> backslash then ref",
    r"lone \ backslash and \n",
    "a < b and c > d",
    "<signals:a.mmhpose> is not a reference",
    "unknown ext <signal:clip.wav>",
    "unicode <signal:données/vidéo.mmhvid> ok",
    # malformed
    "never closed <signal:a.mmhpose",
    "empty path <signal:>",
    "bad bounds <signal:a.mmhpose#1-x>",
    "reversed bounds <signal:a.mmhpose#300-100>",
    "no dash <signal:a.mmhpose#100>",
]


def as_tuples(segments):
    out = []
    for seg in segments:
        if isinstance(seg, Text):
            out.append(("text", seg.content))
        else:
            out.append(("signal", seg.path, seg.start_ms, seg.end_ms))
    return out


@pytest.mark.parametrize("text", GOLDEN)
def test_golden_corpus_matches_oracle(text):
    expected = reference_oracle(text)
    if expected == "error":
        with pytest.raises(MalformedReference):
            detect_signals(text)
    else:
        assert as_tuples(detect_signals(text)) == expected


def test_golden_corpus_size_and_spot_checks():
    assert len(GOLDEN) == 20
    segs = detect_signals("clip <signal:dir/b.mmhfeat#0-4000> and <signal:c.mmhvid>")
    assert segs == [Text("clip "), Signal("dir/b.mmhfeat", 0, 4000, "features"), Text(" and "),
                    Signal("c.mmhvid", 0, 0, "video")]
    assert detect_signals(r"escaped \<signal:a.mmhpose> x") == [Text("escaped <signal:a.mmhpose> x")]
    assert detect_signals("<signal:clip.wav>")[0].modality is None
    with pytest.raises(MalformedReference) as info:
        detect_signals("ab <signal:x")
    assert info.value.offset == 3


segment_text = st.text(alphabet=st.sampled_from(list("ab <>\\#-:signal")), min_size=1, max_size=12)
segment_signal = st.builds(
    Signal,
    st.text(alphabet=st.sampled_from(list("abc/._-")), min_size=1, max_size=8).map(lambda s: s + "/f.mmhpose"),
    st.just(0), st.just(0), st.just("pose"),
)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(segment_text.map(Text), segment_signal), max_size=6))
def test_serialize_roundtrip(segments):
    # adjacent text segments merge when parsed back
    merged = []
    for seg in segments:
        if merged and isinstance(seg, Text) and isinstance(merged[-1], Text):
            merged[-1] = Text(merged[-1].content + seg.content)
        else:
            merged.append(seg)
    assert detect_signals(serialize_segments(merged)) == merged


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("ab <>\\#-0123:signal.mhpose")), max_size=40))
def test_parser_agrees_with_oracle_on_noise(text):
    expected = reference_oracle(text)
    try:
        got = as_tuples(detect_signals(text))
    except MalformedReference:
        got = "error"
    assert got == expected


@pytest.fixture
def pose_dir(tmp_path):
    rng = np.random.default_rng(0)
    save_pose(PoseSequence(rng.normal(size=(20, 4, 3)).astype(np.float32), 25.0), tmp_path / "a.mmhpose")
    return tmp_path


def test_process_mixed_keeps_order(pose_dir):
    vocab = build_vocabulary(["translate into words this"])
    rec = MixedRecord("translate <signal:a.mmhpose#40-600> into words", "", "this")
    x = process_mixed(rec, vocab, ProcessorConfig(base_dir=str(pose_dir)))
    kinds = [type(b).__name__ for b in x.encoder_blocks]
    assert kinds == ["TokenBlock", "FeatureBlock", "TokenBlock"]
    # 40 ms -> frame 1, 600 ms -> frame 15
    assert x.encoder_blocks[1].features.shape == (14, 12)
    plan = assemble_encoder_embedding_plan(aligned_streams(x))
    assert [p.source for p in plan] == ["token"] + ["feature"] * 14 + ["token", "token"]
    assert [p.position for p in plan] == list(range(17))
    assert x.label_tokens[-1] == vocab.eos_id and x.decoder_prompt_tokens == (vocab.pad_id,)


def test_process_mixed_unknown_modality(pose_dir):
    vocab = build_vocabulary(["x"])
    with pytest.raises(UnknownModality):
        process_mixed(MixedRecord("x <signal:a.wav>", "", "x"), vocab, ProcessorConfig(base_dir=str(pose_dir)))


@pytest.mark.parametrize("text,decoder,label", [
    ("<mt> es en El gato se sienta en la estera.", "", "The cat sits on the mat."),
    (r"a \<b> c", "The", "cat sits"),
    ("hello", "", ""),
])
def test_no_reference_reduces_to_text2text(text, decoder, label):
    vocab = build_vocabulary([text.replace("\\", ""), decoder, label, "El gato"])
    mixed = process_mixed(MixedRecord(text, decoder, label), vocab, index=3)
    plain_text = detect_signals(text)[0].content
    plain = process_sample(SampleRecord("", 0, 0, plain_text, decoder, label), "text2text", vocab, index=3)
    assert mixed.same_as(plain)
    assert all(isinstance(b, TokenBlock) for b in mixed.encoder_blocks)


def test_mixed_tsv_roundtrip_and_validation(tmp_path, pose_dir):
    table = MixedTable("train", (
        MixedRecord("see <signal:a.mmhpose>", "", "ok"),
        MixedRecord("see <signal:missing.mmhpose>", "", "ok"),
        MixedRecord("see <signal:a.mmhpose#9-3>", "", "ok"),
        MixedRecord("see <signal:a.wav>", "", "ok"),
    ), str(pose_dir / "train.tsv"))
    write_mixed_tsv(table, pose_dir / "train.tsv")
    back = parse_mixed_tsv(pose_dir / "train.tsv")
    assert back.records == table.records
    assert [v.row for v in validate_mixed(back)] == [1, 2, 3]


def test_feature_block_is_mapped_feature_input(pose_dir):
    vocab = build_vocabulary(["a"])
    x = process_mixed(MixedRecord("<signal:a.mmhpose>", "", "a"), vocab, ProcessorConfig(base_dir=str(pose_dir)))
    assert len(x.encoder_blocks) == 1 and isinstance(x.encoder_blocks[0], FeatureBlock)
