"""Shared fixtures: the two reference notes and small dataset builders."""

from pathlib import Path
from typing import List, Optional, Sequence

import pytest

from medcorrect.corpus import (ClinicalNote, Dataset, GoldLabel, Record,
                               Sentence)

FIXTURES = Path(__file__).parent / "fixtures"

# one line per acceptance criterion, echoed after the run summary
ACCEPTANCE_REPORT: List[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.write_line("")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)

STROKE_SENTENCES = (
    "A 78-year-old man is brought in to the emergency department by "
    "ambulance after his wife noticed that he began slurring his speech and "
    "had developed facial asymmetry during dinner approximately 30 minutes "
    "ago.",
    "His past medical history is remarkable for hypertension and diabetes.",
    "His temperature is 99.1 F (37.3 C), blood pressure is 154/99",
    "mmHg, pulse is 89/min, respirations are 12/min, and oxygen saturation "
    "is 98% on room air.",
    "CTA of the head is obtained after neurologic exam reveals right upper "
    "and lower extremity weakness and an asymmetric smile.",
)

STROKE_CORRECTION = (
    "CT of the head is obtained after neurologic exam reveals right upper "
    "and lower extremity weakness and an asymmetric smile.")

BOY_SENTENCES = (
    "A 4-year-old boy is brought to the physician in December for episodic "
    "shortness of breath and a nonproductive cough for 3 months.",
    "These episodes frequently occur before sleeping, and he occasionally "
    "wakes up because of difficulty breathing.",
    "His mother also reports that he became short of breath while playing "
    "with his friends at daycare on several occasions.",
    "He is allergic to peanuts.",
    "He is at the 55th percentile for height and weight.",
    "Vital signs are within normal limits.",
    "Examination shows mild scattered wheezing in the thorax.",
    "An x-ray of the chest shows no abnormalities.",
    "Suspected of primary ciliary dyskinesia.",
)


def golden(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def make_note(note_id: str, texts: Sequence[str],
              source: str = "MS") -> ClinicalNote:
    sentences = tuple(Sentence(sid, text) for sid, text in enumerate(texts))
    return ClinicalNote(note_id=note_id, source=source, sentences=sentences)


def make_record(note_id: str, texts: Sequence[str], source: str = "MS",
                error_sid: int = -1, corrected: Optional[str] = None,
                span: Optional[str] = None) -> Record:
    note = make_note(note_id, texts, source)
    if error_sid == -1:
        gold = GoldLabel(error_flag=0, error_sid=-1)
    else:
        gold = GoldLabel(error_flag=1, error_sid=error_sid,
                         corrected_sentence=corrected, error_span=span)
    return Record(note=note, gold=gold)


def make_dataset(records: Sequence[Record], split: str = "valid") -> Dataset:
    return Dataset(records=tuple(records), split=split)


@pytest.fixture
def stroke_note() -> ClinicalNote:
    return make_note("ms-stroke-01", STROKE_SENTENCES)


@pytest.fixture
def stroke_record() -> Record:
    return make_record("ms-stroke-01", STROKE_SENTENCES, error_sid=4,
                       corrected=STROKE_CORRECTION, span="CTA of the head")


@pytest.fixture
def boy_note() -> ClinicalNote:
    return make_note("ms-boy-01", BOY_SENTENCES)


@pytest.fixture
def boy_record() -> Record:
    return make_record("ms-boy-01", BOY_SENTENCES, error_sid=8,
                       corrected="Suspected of asthma.",
                       span="primary ciliary dyskinesia")
