"""Prompt construction for the correction strategies.

All rendering is deterministic: the same note, examples, and spec always
produce the same message list. Prompt text lives in templates.py; this
module only assembles it.
"""

import json
import logging
import string
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import templates
from .corpus import ClinicalNote, GoldLabel, join_sentences, render_numbered_note
from .errors import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)

PERSONAS = tuple(templates.ROLE_PHRASES)
COT_STYLES = ("none", "brief", "long", "soap")
RECOMMENDED_SHOTS = (0, 2, 4, 8)

_ROLES = {"system", "user", "assistant"}


@dataclass(frozen=True)
class ChatMessage:
    """One turn of a chat transcript."""

    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValidationError(f"unknown chat role {self.role!r}")
        if not isinstance(self.content, str) or not self.content:
            raise ValidationError("chat message content must be a non-empty string")


@dataclass(frozen=True)
class PromptSpec:
    """Knobs that shape an end-to-end correction prompt."""

    persona: str = "clinician_assistant"
    shots: int = 0
    cot_style: str = "none"
    type_hint: bool = False
    span_hint: Optional[str] = None

    def __post_init__(self):
        if self.persona not in PERSONAS:
            raise ConfigError(f"unknown persona {self.persona!r}")
        if self.cot_style not in COT_STYLES:
            raise ConfigError(f"unknown reasoning style {self.cot_style!r}")
        if not isinstance(self.shots, int) or self.shots < 0:
            raise ConfigError("shots must be a non-negative integer")
        if self.shots not in RECOMMENDED_SHOTS:
            logger.warning("unusual shot count %d (expected one of %s)",
                           self.shots, RECOMMENDED_SHOTS)
        if self.span_hint is not None and not self.span_hint:
            raise ConfigError("span hint must be non-empty when provided")


@dataclass(frozen=True)
class IclExample:
    """A demonstration pair: a note plus its gold answer.

    reason carries the pre-generated rationale used for chain-of-thought
    prompting and must always be tagged with the style it was written in.
    """

    note: ClinicalNote
    gold: GoldLabel
    reason: Optional[str] = None
    reason_style: Optional[str] = None

    def __post_init__(self):
        if (self.reason is None) != (self.reason_style is None):
            raise ValidationError(
                f"example for note {self.note.note_id}: reason and "
                "reason_style must be set together")
        if self.reason_style is not None and self.reason_style not in COT_STYLES[1:]:
            raise ValidationError(
                f"example for note {self.note.note_id}: unknown reason "
                f"style {self.reason_style!r}")


@dataclass(frozen=True)
class BlankResult:
    """A note with one span masked out.

    text is the whole note as a paragraph; sentence is the masked sentence
    on its own; sid is its sentence id.
    """

    text: str
    sentence: str
    sid: int

    def __post_init__(self):
        for label, value in (("text", self.text), ("sentence", self.sentence)):
            if value.count(templates.BLANK_PLACEHOLDER) != 1:
                raise ValidationError(
                    f"blanked {label} must contain the placeholder exactly once")
        if self.sid < 0:
            raise ValidationError("blanked sentence id must be non-negative")


@dataclass(frozen=True)
class OptionSet:
    """Labelled multiple-choice options with the predicted span injected.

    options pairs each letter with its text; injected_index points at the
    predicted-span entry.
    """

    options: Tuple[Tuple[str, str], ...]
    injected_index: int

    def __post_init__(self):
        if not self.options:
            raise ValidationError("option set must not be empty")
        if len(self.options) > len(string.ascii_uppercase):
            raise ValidationError("option set exceeds the letter alphabet")
        for i, (letter, text) in enumerate(self.options):
            if letter != string.ascii_uppercase[i]:
                raise ValidationError(
                    f"option letters must run A, B, ... (got {letter!r} at {i})")
            if not text:
                raise ValidationError("option text must be non-empty")
        keys = [text.casefold() for _, text in self.options]
        if len(set(keys)) != len(keys):
            raise ValidationError("option texts must be pairwise distinct")
        if not 0 <= self.injected_index < len(self.options):
            raise ValidationError("injected_index out of range")

    @property
    def injected_text(self) -> str:
        return self.options[self.injected_index][1]


def render_system_prompt(persona: str) -> ChatMessage:
    """Build the system message for the given persona."""
    if persona not in templates.ROLE_PHRASES:
        raise ConfigError(f"unknown persona {persona!r}")
    phrase = templates.ROLE_PHRASES[persona]
    role_clause = "" if phrase is None else phrase + " "
    return ChatMessage("system", templates.SYSTEM_PROMPT.format(role_clause=role_clause))


def render_gold_answer(gold: GoldLabel, reason: Optional[str] = None) -> str:
    """Serialize a gold label as the JSON answer the model is asked for."""
    payload: Dict[str, str] = {}
    if reason is not None:
        payload["reason"] = reason
    payload["incorrect_sentence_id"] = str(gold.error_sid)
    payload["correction"] = gold.corrected_sentence if gold.error_flag == 1 else "NA"
    return json.dumps(payload, indent=4, ensure_ascii=False)


def _clinical_text_block(note: ClinicalNote) -> str:
    return (templates.CLINICAL_TEXT_HEADER + "\n\n"
            + render_numbered_note(note))


def _example_user_message(note: ClinicalNote) -> str:
    return (_clinical_text_block(note) + "\n\n"
            + templates.TASK_INSTRUCTION + "\n"
            + templates.ANSWER_CUE)


def _query_user_message(note: ClinicalNote, spec: PromptSpec) -> str:
    hints: List[str] = []
    if spec.type_hint:
        hints.append(templates.TYPE_HINT)
    if spec.span_hint is not None:
        hints.append(templates.SPAN_HINT.format(span=spec.span_hint))

    task = templates.TASK_INSTRUCTION
    if hints:
        task += templates.HINT_SUFFIX
        task += "\n" + templates.HINT_HEADER
        for hint in hints:
            task += "\n- " + hint
    if spec.cot_style != "none":
        task += "\n" + templates.COT_TRIGGER
    return (_clinical_text_block(note) + "\n\n"
            + task + "\n"
            + templates.ANSWER_CUE)


def render_e2e_prompt(note: ClinicalNote,
                      icl_examples: Sequence[IclExample],
                      spec: PromptSpec) -> List[ChatMessage]:
    """Assemble the full end-to-end correction transcript.

    Layout: system message, then one user/assistant pair per demonstration,
    then the query note as the final user message. Demonstrations carry the
    rationale only when the spec asks for chain-of-thought, and every
    demonstration's rationale style must match the spec.
    """
    if len(icl_examples) != spec.shots:
        raise ValidationError(
            f"prompt spec asks for {spec.shots} demonstrations, "
            f"got {len(icl_examples)}")

    messages = [render_system_prompt(spec.persona)]
    want_reason = spec.cot_style != "none"
    for example in icl_examples:
        if want_reason and example.reason_style != spec.cot_style:
            raise ValidationError(
                f"example for note {example.note.note_id} has reason style "
                f"{example.reason_style!r}, prompt wants {spec.cot_style!r}")
        reason = example.reason if want_reason else None
        messages.append(ChatMessage("user", _example_user_message(example.note)))
        messages.append(ChatMessage("assistant",
                                    render_gold_answer(example.gold, reason)))
    messages.append(ChatMessage("user", _query_user_message(note, spec)))
    return messages


def render_reason_request(note: ClinicalNote, gold: GoldLabel,
                          style: str) -> List[ChatMessage]:
    """Build the one-off request that asks for a demonstration rationale."""
    if style not in COT_STYLES[1:]:
        raise ConfigError(f"rationales only exist for reasoning styles, got {style!r}")
    has_error = gold.error_flag == 1
    header = (templates.REASON_REQUEST_HEADER if has_error
              else templates.REASON_REQUEST_HEADER_NO_ERROR)
    if has_error:
        verdict = templates.REASON_VERDICT_ERROR.format(
            sid=gold.error_sid, corrected=gold.corrected_sentence)
    else:
        verdict = templates.REASON_VERDICT_NO_ERROR
    instruction = {
        ("brief", True): templates.REASON_STYLE_BRIEF,
        ("brief", False): templates.REASON_STYLE_BRIEF_NO_ERROR,
        ("long", True): templates.REASON_STYLE_LONG,
        ("long", False): templates.REASON_STYLE_LONG_NO_ERROR,
        ("soap", True): templates.REASON_STYLE_SOAP,
        ("soap", False): templates.REASON_STYLE_SOAP_NO_ERROR,
    }[(style, has_error)]
    content = (header + "\n\n"
               + _clinical_text_block(note) + "\n\n"
               + verdict + "\n\n"
               + instruction)
    return [ChatMessage("user", content)]


def blank_out_span(note: ClinicalNote, span: str) -> BlankResult:
    """Mask one occurrence of span in the note.

    The span must fall inside exactly one sentence; the first occurrence
    within that sentence is replaced.
    """
    if not span:
        raise ValidationError("cannot blank an empty span")
    holders = [s for s in note.sentences if span in s.text]
    if not holders:
        if span in join_sentences(note):
            raise ValidationError(
                f"span {span!r} crosses a sentence boundary in note {note.note_id}")
        raise ValidationError(f"span {span!r} not found in note {note.note_id}")
    if len(holders) > 1:
        sids = [s.sid for s in holders]
        raise ValidationError(
            f"span {span!r} appears in multiple sentences {sids} "
            f"of note {note.note_id}")
    target = holders[0]
    blanked_sentence = target.text.replace(span, templates.BLANK_PLACEHOLDER, 1)
    pieces = [blanked_sentence if s.sid == target.sid else s.text
              for s in note.sentences]
    return BlankResult(text=" ".join(pieces), sentence=blanked_sentence,
                       sid=target.sid)


def option_keys_phrase(n: int) -> str:
    """Spell out the JSON keys the option request asks for."""
    if n < 1:
        raise ValidationError("must request at least one option")
    if n == 1:
        return "'option'"
    keys = [f"'option_{i}'" for i in range(1, n + 1)]
    return ", ".join(keys[:-1]) + " and " + keys[-1]


def render_mcq_option_request(blank: BlankResult, span: str,
                              n_options: int) -> List[ChatMessage]:
    """Ask the model to propose n_options alternatives for the blank."""
    if not span:
        raise ValidationError("predicted span must be non-empty")
    question = templates.MCQ_OPTION_QUESTION.format(
        sentence=blank.sentence, span=span,
        keys=option_keys_phrase(n_options))
    content = (templates.MCQ_JOB_HEADER + "\n\n"
               + question + "\n\n"
               + templates.CLINICAL_NOTE_HEADER + "\n\n"
               + blank.text + "\n\n"
               + templates.GENERATED_ANSWER_CUE)
    return [ChatMessage("user", content)]


def assemble_options(generated: Sequence[str], span: str,
                     injected_index: int) -> OptionSet:
    """Merge generated alternatives with the predicted span.

    Generated texts are stripped; blanks, repeats, and anything matching the
    span (ignoring case) are dropped. The span then goes in at
    injected_index, clamped to the surviving list.
    """
    if not span:
        raise ValidationError("predicted span must be non-empty")
    if injected_index < 0:
        raise ValidationError(
            f"injected_index must be non-negative, got {injected_index}")
    span_key = span.casefold()
    cleaned: List[str] = []
    seen = {span_key}
    for raw in generated:
        text = raw.strip()
        key = text.casefold()
        if not text or key in seen:
            continue
        seen.add(key)
        cleaned.append(text)
    if not cleaned:
        raise ValidationError(
            "no usable generated options: all were empty or duplicated "
            "the predicted span")
    index = min(injected_index, len(cleaned))
    texts = cleaned[:index] + [span] + cleaned[index:]
    if len(texts) > len(string.ascii_uppercase):
        raise ValidationError("too many options for letter labels")
    options = tuple(zip(string.ascii_uppercase, texts))
    return OptionSet(options=options, injected_index=index)


def render_mcq_question(blank: BlankResult,
                        option_set: OptionSet) -> List[ChatMessage]:
    """Ask the model to pick the best fill-in from the assembled options."""
    if len(option_set.options) < 2:
        raise ValidationError("multiple choice needs at least two options")
    question = templates.MCQ_ANSWER_QUESTION.format(sentence=blank.sentence)
    lines = "\n".join(f"{letter}. {text}" for letter, text in option_set.options)
    content = (templates.MCQ_JOB_HEADER + "\n\n"
               + question + "\n\n"
               + templates.CLINICAL_NOTE_HEADER + "\n\n"
               + blank.text + "\n\n"
               + templates.OPTIONS_HEADER + "\n\n"
               + lines + "\n\n"
               + templates.GENERATED_ANSWER_CUE)
    return [ChatMessage("user", content)]


class ReasonBank:
    """Store of pre-generated demonstration rationales.

    Keyed by (note_id, style). Persisted as JSONL with fields note_id,
    reason_style, and reason.
    """

    def __init__(self):
        self._reasons: Dict[Tuple[str, str], str] = {}

    def __len__(self) -> int:
        return len(self._reasons)

    def has(self, note_id: str, style: str) -> bool:
        return (note_id, style) in self._reasons

    def get(self, note_id: str, style: str) -> Optional[str]:
        return self._reasons.get((note_id, style))

    def put(self, note_id: str, style: str, reason: str) -> None:
        if style not in COT_STYLES[1:]:
            raise ValidationError(f"unknown reason style {style!r}")
        if not reason:
            raise ValidationError(f"empty reason for note {note_id}")
        if (note_id, style) in self._reasons:
            logger.warning("replacing stored reason for note %s style %s",
                           note_id, style)
        self._reasons[(note_id, style)] = reason

    @classmethod
    def load(cls, path: str) -> "ReasonBank":
        bank = cls()
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    note_id = row["note_id"]
                    style = row["reason_style"]
                    reason = row["reason"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad reason row: {exc}") from exc
                bank.put(note_id, style, reason)
        return bank

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for (note_id, style), reason in sorted(self._reasons.items()):
                handle.write(json.dumps(
                    {"note_id": note_id, "reason_style": style, "reason": reason},
                    ensure_ascii=False) + "\n")
