"""Error-span prediction: extractive-QA data conversion, predictors, metrics.

The span model itself lives in a separate service; this module converts
notes to its training format, talks to it (or stands in for it), and
scores span predictions with the usual extractive-QA metrics.
"""

import difflib
import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import requests

from .corpus import ClinicalNote, Dataset, GoldLabel, error_subset, render_numbered_note
from .errors import ConfigError, ParseError, RequestError, TransportError, ValidationError

logger = logging.getLogger(__name__)

SQUAD_QUESTION = "Which part in the given clinical note is clinically incorrect?"

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class SpanPrediction:
    """A predicted error span with character offsets into the rendered note."""

    text: str
    start_char: int
    end_char: int
    confidence: Optional[float] = None

    def __post_init__(self):
        if not self.text:
            raise ValidationError("span text must be non-empty")
        if self.end_char <= self.start_char:
            raise ValidationError("span end must be past its start")
        if self.end_char - self.start_char != len(self.text):
            raise ValidationError("span offsets disagree with its text length")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("span confidence must be in [0, 1]")


@dataclass(frozen=True)
class SquadRecord:
    """One extractive-QA training record."""

    id: str
    question: str
    context: str
    answer_text: str
    answer_start: int

    def __post_init__(self):
        got = self.context[self.answer_start:self.answer_start + len(self.answer_text)]
        if got != self.answer_text:
            raise ValidationError(
                f"record {self.id}: answer offset does not reproduce the answer text")


def _diff_span(wrong: str, corrected: str) -> Tuple[str, int]:
    """Locate the changed region of wrong relative to corrected.

    Compares word by word and returns the slice of wrong from the first
    through the last differing word, with its character offset. When the
    correction only inserts words, the whole sentence is returned.
    """
    wrong_words = [m for m in _WORD_RE.finditer(wrong)]
    corrected_words = corrected.split()
    matcher = difflib.SequenceMatcher(
        None, [m.group(0) for m in wrong_words], corrected_words, autojunk=False)
    changed: List[int] = []
    for tag, i1, i2, _, _ in matcher.get_opcodes():
        if tag != "equal":
            changed.extend(range(i1, i2))
    if not changed:
        return wrong, 0
    start = wrong_words[changed[0]].start()
    end = wrong_words[changed[-1]].end()
    return wrong[start:end], start


def derive_error_span(note: ClinicalNote, gold: GoldLabel) -> Optional[SpanPrediction]:
    """Recover the erroneous span of a labelled note.

    Uses the annotated span when the label carries one; otherwise falls
    back to a word-level diff of the error sentence against its
    correction. Offsets refer to the numbered rendering of the note.
    """
    if gold.error_flag == 0:
        return None
    sentence = note.sentence_text(gold.error_sid)
    if gold.error_span is not None:
        text = gold.error_span
        offset = sentence.find(text)
        if offset < 0:
            raise ValidationError(
                f"note {note.note_id}: annotated span {text!r} is not in "
                f"sentence {gold.error_sid}")
    else:
        text, offset = _diff_span(sentence, gold.corrected_sentence)
    context = render_numbered_note(note)
    line_start = 0
    for sentence_obj in note.sentences:
        if sentence_obj.sid == gold.error_sid:
            line_start += len(f"{sentence_obj.sid} ")
            break
        line_start += len(f"{sentence_obj.sid} {sentence_obj.text}") + 1
    start = line_start + offset
    return SpanPrediction(text=text, start_char=start, end_char=start + len(text))


def to_squad(note: ClinicalNote, gold: GoldLabel) -> SquadRecord:
    """Convert one labelled error note to an extractive-QA record.

    The answer offset points at the first occurrence of the span text in
    the rendered context, matching how QA training data is conventionally
    anchored.
    """
    if gold.error_flag == 0:
        raise ValidationError(
            f"note {note.note_id}: cannot convert a no-error record")
    span = derive_error_span(note, gold)
    context = render_numbered_note(note)
    answer_start = context.find(span.text)
    if answer_start < 0:
        raise ValidationError(
            f"note {note.note_id}: span text not found in rendered context")
    return SquadRecord(id=note.note_id, question=SQUAD_QUESTION,
                       context=context, answer_text=span.text,
                       answer_start=answer_start)


def export_squad_dataset(dataset: Dataset, path: str) -> int:
    """Write the error-containing records as QA-format JSONL; returns a count."""
    records = [to_squad(r.note, r.gold) for r in error_subset(dataset)]
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps({
                "id": record.id,
                "question": record.question,
                "context": record.context,
                "answer_text": record.answer_text,
                "answer_start": record.answer_start,
            }, ensure_ascii=False) + "\n")
    return len(records)


def normalize_answer(text: str) -> str:
    """SQuAD-style answer normalization."""
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred_text: str, gold_text: str) -> int:
    return int(normalize_answer(pred_text) == normalize_answer(gold_text))


def token_f1(pred_text: str, gold_text: str) -> float:
    pred_tokens = normalize_answer(pred_text).split()
    gold_tokens = normalize_answer(gold_text).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


class NullSpanPredictor:
    """Ablation predictor: never yields a span."""

    def predict(self, note: ClinicalNote) -> Optional[SpanPrediction]:
        return None


class GoldOracleSpanPredictor:
    """Returns the labelled span; for deterministic harness runs only."""

    def __init__(self, dataset: Dataset):
        if dataset.split == "test":
            raise ConfigError("gold spans are off limits on the test split")
        if not dataset.has_labels():
            raise ConfigError("gold-oracle predictor needs labelled data")
        self._records = {r.note.note_id: r for r in dataset}

    def predict(self, note: ClinicalNote) -> Optional[SpanPrediction]:
        record = self._records.get(note.note_id)
        if record is None:
            raise ValidationError(f"note {note.note_id} is not in the oracle dataset")
        return derive_error_span(record.note, record.gold)


class OfflineSpanPredictor:
    """Serves spans from a predictions file written by the span service."""

    def __init__(self, path: str):
        self._spans: Dict[str, Optional[SpanPrediction]] = {}
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    note_id = row["note_id"]
                    text = row["text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad span row: {exc}") from exc
                if not text:
                    self._spans[note_id] = None
                    continue
                self._spans[note_id] = SpanPrediction(
                    text=text, start_char=int(row.get("start", 0)),
                    end_char=int(row.get("start", 0)) + len(text))

    def predict(self, note: ClinicalNote) -> Optional[SpanPrediction]:
        if note.note_id not in self._spans:
            logger.warning("no stored span prediction for note %s", note.note_id)
            return None
        return self._spans[note.note_id]


class RemoteSpanPredictor:
    """Client for the span service's HTTP prediction endpoint."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/") + "/predict"
        self.timeout = timeout

    def predict(self, note: ClinicalNote) -> Optional[SpanPrediction]:
        context = render_numbered_note(note)
        try:
            reply = requests.post(self.endpoint, json={"context": context},
                                  timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"span service unreachable: {exc}") from exc
        if reply.status_code != 200:
            raise RequestError(
                f"span service returned status {reply.status_code}")
        try:
            body = reply.json()
            text = body["text"]
            start = int(body["start"])
            end = int(body["end"])
        except (ValueError, KeyError, TypeError) as exc:
            raise RequestError(f"malformed span service reply: {exc}") from exc
        if not text:
            return None
        if context[start:end] != text:
            raise RequestError(
                "span service offsets do not reproduce the span text")
        return SpanPrediction(text=text, start_char=start, end_char=end)


def evaluate_spans(dataset: Dataset,
                   predictions: Dict[str, str]) -> Tuple[float, float]:
    """Mean exact-match and token-F1 percentages over the error subset.

    predictions maps note_id to the predicted span text and must cover
    every error-containing note.
    """
    subset = error_subset(dataset)
    if len(subset) == 0:
        raise ValidationError("no error-containing notes to evaluate")
    em_total = 0.0
    f1_total = 0.0
    for record in subset:
        note_id = record.note.note_id
        if note_id not in predictions:
            raise ValidationError(f"missing span prediction for note {note_id}")
        gold_span = derive_error_span(record.note, record.gold)
        em_total += exact_match(predictions[note_id], gold_span.text)
        f1_total += token_f1(predictions[note_id], gold_span.text)
    n = len(subset)
    return 100.0 * em_total / n, 100.0 * f1_total / n
