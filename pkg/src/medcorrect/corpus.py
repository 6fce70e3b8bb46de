"""Sentence-indexed clinical notes, gold labels, and dataset I/O.

Notes are exchanged as JSONL, one record per line:

    {"id": str, "source": "MS"|"UW",
     "sentences": [{"sid": int, "text": str}, ...],
     "error_flag": 0|1|null, "error_sid": int|null,
     "corrected_sentence": str|null, "error_span": str|null}

Label fields may be null only for the test split. ``error_span`` is an
optional explicit annotation of the erroneous fragment; when absent it is
derived by diffing the error sentence against its correction (see
``spans.derive_error_span``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .errors import ParseError, ValidationError

SOURCES = ("MS", "UW")
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class Sentence:
    sid: int
    text: str


@dataclass(frozen=True)
class ClinicalNote:
    """One clinical note as an ordered list of indexed sentences."""

    note_id: str
    source: str
    sentences: Tuple[Sentence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.note_id:
            raise ValidationError("note with empty id")
        if self.source not in SOURCES:
            raise ValidationError(
                f"note {self.note_id!r}: unknown source {self.source!r}"
            )
        if not self.sentences:
            raise ValidationError(f"note {self.note_id!r}: no sentences")
        for i, sent in enumerate(self.sentences):
            if sent.sid != i:
                raise ValidationError(
                    f"note {self.note_id!r}: sentence ids must be contiguous "
                    f"from 0, got sid {sent.sid} at position {i}"
                )
            if not sent.text.strip():
                raise ValidationError(
                    f"note {self.note_id!r}: sentence {sent.sid} is empty"
                )

    def sentence_text(self, sid: int) -> str:
        if not 0 <= sid < len(self.sentences):
            raise ValidationError(
                f"note {self.note_id!r}: no sentence with sid {sid}"
            )
        return self.sentences[sid].text


@dataclass(frozen=True)
class GoldLabel:
    """Gold annotation: error flag, error sentence id, and correction."""

    error_flag: int
    error_sid: int
    corrected_sentence: Optional[str] = None
    error_span: Optional[str] = None

    def __post_init__(self):
        if self.error_flag not in (0, 1):
            raise ValidationError(f"error_flag must be 0 or 1, got {self.error_flag!r}")
        if self.error_flag == 0:
            if self.error_sid != -1:
                raise ValidationError(
                    f"error_flag=0 requires error_sid=-1, got {self.error_sid}"
                )
            if self.corrected_sentence is not None:
                raise ValidationError("error_flag=0 forbids a corrected_sentence")
            if self.error_span is not None:
                raise ValidationError("error_flag=0 forbids an error_span")
        else:
            if self.error_sid < 0:
                raise ValidationError(
                    f"error_flag=1 requires a valid error_sid, got {self.error_sid}"
                )
            if not (self.corrected_sentence or "").strip():
                raise ValidationError("error_flag=1 requires a corrected_sentence")


@dataclass(frozen=True)
class Record:
    note: ClinicalNote
    gold: Optional[GoldLabel] = None

    def __post_init__(self):
        gold = self.gold
        if gold is not None and gold.error_flag == 1:
            if gold.error_sid >= len(self.note.sentences):
                raise ValidationError(
                    f"note {self.note.note_id!r}: error_sid {gold.error_sid} "
                    f"out of range for {len(self.note.sentences)} sentences"
                )


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of records; safe for concurrent reads."""

    records: Tuple[Record, ...]
    split: str

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        seen = set()
        for rec in self.records:
            nid = rec.note.note_id
            if nid in seen:
                raise ValidationError(f"duplicate note_id {nid!r}")
            seen.add(nid)
            if rec.gold is None and self.split != "test":
                raise ValidationError(
                    f"note {nid!r}: labels may be null only in the test split"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def get(self, note_id: str) -> Record:
        for rec in self.records:
            if rec.note.note_id == note_id:
                return rec
        raise KeyError(note_id)

    def has_labels(self) -> bool:
        return all(rec.gold is not None for rec in self.records)

    def sources(self) -> List[str]:
        out = []
        for rec in self.records:
            if rec.note.source not in out:
                out.append(rec.note.source)
        return out


def _note_from_json(obj: dict) -> ClinicalNote:
    sentences = [
        Sentence(sid=int(s["sid"]), text=str(s["text"]).strip())
        for s in obj["sentences"]
    ]
    return ClinicalNote(
        note_id=str(obj["id"]), source=obj["source"], sentences=tuple(sentences)
    )


def _gold_from_json(obj: dict, split: str, note_id: str) -> Optional[GoldLabel]:
    flag = obj.get("error_flag")
    sid = obj.get("error_sid")
    if flag is None and sid is None:
        if split != "test":
            raise ValidationError(
                f"note {note_id!r}: labels may be null only in the test split"
            )
        return None
    if flag is None or sid is None:
        raise ValidationError(
            f"note {note_id!r}: error_flag and error_sid must both be present"
        )
    corrected = obj.get("corrected_sentence")
    span = obj.get("error_span")
    try:
        return GoldLabel(
            error_flag=int(flag),
            error_sid=int(sid),
            corrected_sentence=None if corrected is None else str(corrected),
            error_span=None if span is None else str(span),
        )
    except ValidationError as exc:
        raise ValidationError(f"note {note_id!r}: {exc}") from exc


def load_dataset(path, split: str) -> Dataset:
    """Load and validate a JSONL dataset file."""
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}: line {lineno}: record must be an object")
            try:
                note = _note_from_json(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(
                    f"{path}: line {lineno}: malformed record ({exc})"
                ) from exc
            gold = _gold_from_json(obj, split, note.note_id)
            records.append(Record(note=note, gold=gold))
    return Dataset(records=tuple(records), split=split)


def record_to_json(rec: Record) -> dict:
    """Serialize one record to the JSONL schema (inverse of loading)."""
    obj = {
        "id": rec.note.note_id,
        "source": rec.note.source,
        "sentences": [{"sid": s.sid, "text": s.text} for s in rec.note.sentences],
        "error_flag": None,
        "error_sid": None,
        "corrected_sentence": None,
    }
    if rec.gold is not None:
        obj["error_flag"] = rec.gold.error_flag
        obj["error_sid"] = rec.gold.error_sid
        obj["corrected_sentence"] = rec.gold.corrected_sentence
        if rec.gold.error_span is not None:
            obj["error_span"] = rec.gold.error_span
    return obj


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in ds.records:
            fh.write(json.dumps(record_to_json(rec), ensure_ascii=False) + "\n")


def render_numbered_note(note: ClinicalNote) -> str:
    """Render a note one sentence per line as "<sid> <text>"."""
    return "\n".join(f"{s.sid} {s.text}" for s in note.sentences)


def join_sentences(note: ClinicalNote) -> str:
    """Render a note as a single space-joined paragraph."""
    return " ".join(s.text for s in note.sentences)


def error_subset(ds: Dataset) -> Dataset:
    """Records with error_flag=1, order preserved."""
    if not ds.has_labels():
        raise ValidationError("error_subset requires gold labels on every record")
    picked = tuple(rec for rec in ds.records if rec.gold.error_flag == 1)
    return Dataset(records=picked, split=ds.split)
