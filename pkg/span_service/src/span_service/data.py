"""QA interchange records and the corpus-derived vocabulary.

The service exchanges data with the correction pipeline through two JSONL
formats only: extractive QA records coming in (id, question, context,
answer_text, answer_start) and span predictions going out (note_id, text,
start, end). Nothing in here imports the pipeline package.
"""

import json
import logging
import math
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")

_WORD = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class QaRecord:
    """One extractive-QA example; the answer fields are optional so the
    same type covers unlabelled prediction requests."""

    id: str
    question: str
    context: str
    answer_text: Optional[str] = None
    answer_start: Optional[int] = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("record id must be non-empty")
        if not self.context:
            raise ValidationError(f"record {self.id}: empty context")
        if (self.answer_text is None) != (self.answer_start is None):
            raise ValidationError(
                f"record {self.id}: answer text and offset must come together")
        if self.answer_text is not None:
            if not self.answer_text:
                raise ValidationError(f"record {self.id}: empty answer")
            end = self.answer_start + len(self.answer_text)
            if self.context[self.answer_start:end] != self.answer_text:
                raise ValidationError(
                    f"record {self.id}: answer_start {self.answer_start} does "
                    "not reproduce the answer text")

    @property
    def answer_end(self) -> int:
        if self.answer_start is None:
            raise ValidationError(f"record {self.id} has no answer")
        return self.answer_start + len(self.answer_text)


def load_qa_jsonl(path: str, require_answers: bool = False) -> List[QaRecord]:
    """Read QA records, one JSON object per line."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                record = QaRecord(id=row["id"], question=row["question"],
                                  context=row["context"],
                                  answer_text=row.get("answer_text"),
                                  answer_start=row.get("answer_start"))
            except (json.JSONDecodeError, KeyError, TypeError,
                    ValidationError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if require_answers and record.answer_text is None:
                raise ParseError(
                    f"{path}:{lineno}: training record without an answer")
            records.append(record)
    logger.info("loaded %d QA records from %s", len(records), path)
    return records


def take_fraction(records: Sequence[QaRecord],
                  fraction: float) -> List[QaRecord]:
    """Deterministic subset rule: sort by record id, keep the first
    floor(n * fraction). Used to fold a fixed share of one source's
    validation data into training."""
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"fraction out of [0, 1]: {fraction}")
    ordered = sorted(records, key=lambda r: r.id)
    return ordered[:math.floor(len(ordered) * fraction)]


def build_vocab(records: Sequence[QaRecord]) -> List[str]:
    """Whole-word lowercase vocabulary over questions and contexts.

    Special tokens come first so [PAD] lands at index 0; the rest is
    sorted for run-to-run stability. Unseen words tokenize to [UNK].
    """
    if not records:
        raise ValidationError("cannot build a vocabulary from zero records")
    words = set()
    for record in records:
        words.update(_WORD.findall(record.question.lower()))
        words.update(_WORD.findall(record.context.lower()))
    return list(SPECIAL_TOKENS) + sorted(words)


def save_vocab(vocab: Sequence[str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(vocab) + "\n")
