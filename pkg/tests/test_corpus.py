import json

import pytest

from medcorrect.corpus import (ClinicalNote, Dataset, GoldLabel, Record,
                               Sentence, error_subset, join_sentences,
                               load_dataset, record_to_json,
                               render_numbered_note, save_dataset)
from medcorrect.errors import ParseError, ValidationError

from conftest import make_dataset, make_note, make_record


def test_sentence_ids_must_be_contiguous_from_zero():
    with pytest.raises(ValidationError):
        ClinicalNote(note_id="n1", source="MS",
                     sentences=(Sentence(1, "a"), Sentence(2, "b")))
    with pytest.raises(ValidationError):
        ClinicalNote(note_id="n1", source="MS",
                     sentences=(Sentence(0, "a"), Sentence(2, "b")))


def test_note_requires_known_source_and_sentences():
    with pytest.raises(ValidationError):
        make_note("n1", ["a"], source="XX")
    with pytest.raises(ValidationError):
        ClinicalNote(note_id="n1", source="MS", sentences=())


def test_sentence_text_lookup(stroke_note):
    assert stroke_note.sentence_text(4).startswith("CTA of the head")
    with pytest.raises(ValidationError):
        stroke_note.sentence_text(5)


def test_gold_label_consistency():
    GoldLabel(error_flag=0, error_sid=-1)
    GoldLabel(error_flag=1, error_sid=2, corrected_sentence="fixed")
    with pytest.raises(ValidationError):
        GoldLabel(error_flag=0, error_sid=2)
    with pytest.raises(ValidationError):
        GoldLabel(error_flag=1, error_sid=-1)
    with pytest.raises(ValidationError):
        GoldLabel(error_flag=1, error_sid=2)  # missing corrected sentence
    with pytest.raises(ValidationError):
        GoldLabel(error_flag=0, error_sid=-1, corrected_sentence="fixed")


def test_error_sid_must_point_at_existing_sentence():
    with pytest.raises(ValidationError):
        make_record("n1", ["a", "b"], error_sid=7, corrected="c")


def test_render_numbered_note(stroke_note):
    rendered = render_numbered_note(stroke_note)
    lines = rendered.split("\n")
    assert len(lines) == 5
    assert lines[0].startswith("0 A 78-year-old man")
    assert lines[4].startswith("4 CTA of the head")


def test_join_sentences(boy_note):
    joined = join_sentences(boy_note)
    assert joined.count("\n") == 0
    assert joined.startswith("A 4-year-old boy")
    assert joined.endswith("Suspected of primary ciliary dyskinesia.")


def test_dataset_rejects_duplicate_note_ids():
    r1 = make_record("n1", ["a"])
    r2 = make_record("n1", ["b"])
    with pytest.raises(ValidationError):
        make_dataset([r1, r2])


def test_dataset_split_validation():
    with pytest.raises(ValidationError):
        make_dataset([make_record("n1", ["a"])], split="dev")


def test_null_labels_only_allowed_on_test_split():
    note = make_note("n1", ["a"])
    rec = Record(note=note, gold=None)
    Dataset(records=(rec,), split="test")
    with pytest.raises(ValidationError):
        Dataset(records=(rec,), split="train")


def test_roundtrip_jsonl(tmp_path, stroke_record, boy_record):
    ds = make_dataset([stroke_record, boy_record], split="train")
    path = tmp_path / "train.jsonl"
    save_dataset(ds, path)
    loaded = load_dataset(path, split="train")
    assert loaded.records == ds.records
    assert loaded.split == "train"


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(record_to_json(make_record("n1", ["a"])))
    path.write_text(good + "\n{not json\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_dataset(path, split="train")
    assert "line 2" in str(info.value)


def test_load_rejects_missing_fields(tmp_path):
    row = record_to_json(make_record("n1", ["a"]))
    del row["source"]
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(row) + "\n", encoding="utf-8")
    with pytest.raises(ParseError):
        load_dataset(path, split="train")


def test_error_subset(stroke_record):
    no_err = make_record("n2", ["all fine here"])
    ds = make_dataset([stroke_record, no_err])
    subset = error_subset(ds)
    assert [r.note.note_id for r in subset] == ["ms-stroke-01"]


def test_has_labels_and_sources(stroke_record):
    uw = make_record("uw-1", ["text"], source="UW")
    ds = make_dataset([stroke_record, uw])
    assert ds.has_labels()
    assert ds.sources() == ["MS", "UW"]
