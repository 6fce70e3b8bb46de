"""The three correction strategies and their run orchestration.

Each strategy turns one clinical note into a CorrectionResult: direct
prompting (e2e), blank-and-choose (mcq), or direct prompting steered by a
predicted span hint (hybrid). run_dataset fans a strategy out over a
dataset with bounded parallelism and deterministic output order.
"""

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

from .corpus import ClinicalNote, Dataset, Record, render_numbered_note
from .errors import ConfigError, MedcorrectError, ParseError, ValidationError
from .gateway import LlmGateway
from .parsing import extract_json_object, parse_mcq_response, parse_option_response
from .prompts import (COT_STYLES, IclExample, PromptSpec, ReasonBank,
                      assemble_options, blank_out_span, render_e2e_prompt,
                      render_mcq_option_request, render_mcq_question,
                      render_reason_request)
from .retrieval import build_index, top_k
from .templates import BLANK_PLACEHOLDER, TEMPLATE_VERSION

logger = logging.getLogger(__name__)

STRATEGIES = ("e2e", "mcq", "hybrid")
PREDICTOR_KINDS = ("none", "gold_oracle", "offline", "remote")
MCQ_TOTAL_OPTIONS = (2, 4)

NO_ERROR_CORRECTION = "NA"


@dataclass(frozen=True)
class CorrectionResult:
    """One note's verdict in the shared output shape."""

    note_id: str
    error_flag: int
    error_sid: int
    correction: str
    reason: Optional[str] = None
    raw_response: str = ""
    strategy: str = "e2e"

    def __post_init__(self):
        if self.error_flag not in (0, 1):
            raise ValidationError(
                f"result for note {self.note_id}: error_flag must be 0 or 1")
        no_error = self.error_flag == 0
        if no_error != (self.error_sid == -1) or no_error != (
                self.correction == NO_ERROR_CORRECTION):
            raise ValidationError(
                f"result for note {self.note_id}: flag, sentence id, and "
                "correction disagree")
        if not no_error and not self.correction.strip():
            raise ValidationError(
                f"result for note {self.note_id}: empty correction")


@dataclass(frozen=True)
class StrategyConfig:
    """Which strategy to run and every knob that shapes it."""

    strategy: str = "e2e"
    prompt_spec: PromptSpec = field(default_factory=PromptSpec)
    predictor: str = "none"
    mcq_total_options: int = 2
    mcq_injected_index: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.predictor not in PREDICTOR_KINDS:
            raise ConfigError(f"unknown predictor kind {self.predictor!r}")
        if self.strategy in ("mcq", "hybrid") and self.predictor == "none":
            raise ConfigError(
                f"strategy {self.strategy!r} needs a span predictor")
        if self.strategy == "mcq":
            if self.mcq_total_options not in MCQ_TOTAL_OPTIONS:
                raise ConfigError(
                    f"mcq_total_options must be one of {MCQ_TOTAL_OPTIONS}")
            if not 0 <= self.mcq_injected_index < self.mcq_total_options:
                raise ConfigError("mcq_injected_index out of range")


def config_digest(cfg: StrategyConfig, sampling_key: str,
                  mask_persona: bool = False) -> str:
    """Hash of everything that can change a run's outputs."""
    payload = {
        "strategy": cfg.strategy,
        "persona": "*" if mask_persona else cfg.prompt_spec.persona,
        "shots": cfg.prompt_spec.shots,
        "cot_style": cfg.prompt_spec.cot_style,
        "type_hint": cfg.prompt_spec.type_hint,
        "span_hint": cfg.prompt_spec.span_hint,
        "predictor": cfg.predictor,
        "mcq_total_options": cfg.mcq_total_options,
        "mcq_injected_index": cfg.mcq_injected_index,
        "sampling": sampling_key,
        "template_version": TEMPLATE_VERSION,
    }
    packed = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(packed.encode("utf-8")).hexdigest()


class ExamplePool:
    """Labelled records indexed for BM25 demonstration retrieval."""

    def __init__(self, datasets: Sequence[Dataset],
                 k1: float = 1.5, b: float = 0.75):
        records: Dict[str, Record] = {}
        for ds in datasets:
            if not ds.has_labels():
                raise ConfigError(
                    "demonstration pools need fully labelled data "
                    f"(split {ds.split!r} is not)")
            for record in ds:
                note_id = record.note.note_id
                if note_id in records:
                    raise ValidationError(
                        f"note {note_id} appears in more than one pool dataset")
                records[note_id] = record
        if not records:
            raise ConfigError("demonstration pool is empty")
        self._records = records
        docs = [(note_id, render_numbered_note(records[note_id].note))
                for note_id in sorted(records)]
        self._index = build_index(docs, k1=k1, b=b)

    def __len__(self) -> int:
        return len(self._records)

    def select(self, note: ClinicalNote, k: int) -> List[Record]:
        """The k most similar pool records, never including the note itself."""
        if k == 0:
            return []
        hits = top_k(self._index, render_numbered_note(note), k,
                     exclude_ids=(note.note_id,))
        return [self._records[doc_id] for doc_id, _ in hits]


def make_icl_examples(records: Sequence[Record], cot_style: str,
                      bank: Optional[ReasonBank]) -> List[IclExample]:
    """Wrap retrieved records as demonstrations, with rationales when needed."""
    examples = []
    for record in records:
        note_id = record.note.note_id
        if cot_style == "none":
            examples.append(IclExample(record.note, record.gold))
            continue
        if bank is None:
            raise ConfigError("chain-of-thought prompting needs a reason bank")
        reason = bank.get(note_id, cot_style)
        if reason is None:
            raise ValidationError(
                f"reason bank has no {cot_style!r} entry for note {note_id}")
        examples.append(IclExample(record.note, record.gold, reason, cot_style))
    return examples


def parse_llm_json(raw: str, note: ClinicalNote,
                   strategy: str = "e2e") -> CorrectionResult:
    """Read a correction reply into a result; anything unusable means no-error.

    A sentence id of -1 always wins over whatever the correction field
    says; a non-integer id, an id outside the note, or a missing
    correction all collapse to the no-error fallback with a logged
    diagnostic.
    """
    def fallback() -> CorrectionResult:
        return CorrectionResult(note.note_id, 0, -1, NO_ERROR_CORRECTION,
                                None, raw, strategy)

    payload = extract_json_object(raw)
    if payload is None:
        logger.warning("note %s: unparseable reply %.120r", note.note_id, raw)
        return fallback()
    if "incorrect_sentence_id" not in payload:
        logger.warning("note %s: reply lacks a sentence id", note.note_id)
        return fallback()
    try:
        sid = int(str(payload["incorrect_sentence_id"]).strip())
    except ValueError:
        logger.warning("note %s: non-integer sentence id %r", note.note_id,
                       payload["incorrect_sentence_id"])
        return fallback()
    reason = payload.get("reason")
    if not isinstance(reason, str) or not reason.strip():
        reason = None
    if sid == -1:
        return CorrectionResult(note.note_id, 0, -1, NO_ERROR_CORRECTION,
                                reason, raw, strategy)
    if sid < -1 or sid >= len(note.sentences):
        logger.warning("note %s: sentence id %d outside the note",
                       note.note_id, sid)
        return fallback()
    correction = payload.get("correction")
    if (not isinstance(correction, str) or not correction.strip()
            or correction.strip() == NO_ERROR_CORRECTION):
        logger.warning("note %s: sentence id %d without a usable correction",
                       note.note_id, sid)
        return fallback()
    return CorrectionResult(note.note_id, 1, sid, correction.strip(),
                            reason, raw, strategy)


def run_e2e(note: ClinicalNote, cfg: StrategyConfig, gateway: LlmGateway,
            pool: Optional[ExamplePool] = None,
            bank: Optional[ReasonBank] = None,
            predictor=None) -> CorrectionResult:
    """Direct correction prompt; the hybrid strategy adds a span hint first."""
    if cfg.strategy not in ("e2e", "hybrid"):
        raise ConfigError(f"run_e2e cannot execute strategy {cfg.strategy!r}")
    spec = cfg.prompt_spec
    if cfg.strategy == "hybrid":
        if predictor is None:
            raise ConfigError("hybrid strategy needs a span predictor")
        prediction = predictor.predict(note)
        spec = replace(spec, span_hint=prediction.text if prediction else None)
    examples: List[IclExample] = []
    if spec.shots > 0:
        if pool is None:
            raise ConfigError(
                f"{spec.shots}-shot prompting needs a demonstration pool")
        records = pool.select(note, spec.shots)
        if len(records) < spec.shots:
            raise ValidationError(
                f"pool yielded {len(records)} of {spec.shots} demonstrations")
        examples = make_icl_examples(records, spec.cot_style, bank)
    messages = render_e2e_prompt(note, examples, spec)
    raw = gateway.chat(messages)
    return parse_llm_json(raw, note, strategy=cfg.strategy)


def run_mcq(note: ClinicalNote, cfg: StrategyConfig, gateway: LlmGateway,
            predictor) -> CorrectionResult:
    """Blank the predicted span, generate alternatives, and let the model pick.

    Choosing the predicted span back means the note is judged correct;
    choosing an alternative produces the corrected sentence. Unusable
    replies at any stage collapse to the no-error fallback.
    """
    if cfg.strategy != "mcq":
        raise ConfigError(f"run_mcq cannot execute strategy {cfg.strategy!r}")
    if predictor is None:
        raise ConfigError("mcq strategy needs a span predictor")

    def fallback(raw: str) -> CorrectionResult:
        return CorrectionResult(note.note_id, 0, -1, NO_ERROR_CORRECTION,
                                None, raw, "mcq")

    prediction = predictor.predict(note)
    if prediction is None:
        raise ValidationError(f"no predicted span for note {note.note_id}")
    blank = blank_out_span(note, prediction.text)

    n_generate = cfg.mcq_total_options - 1
    option_request = render_mcq_option_request(blank, prediction.text, n_generate)
    option_raw = gateway.chat(option_request)
    generated = parse_option_response(option_raw, n_generate)
    if not generated:
        logger.warning("note %s: no usable generated options", note.note_id)
        return fallback(option_raw)
    try:
        option_set = assemble_options(generated, prediction.text,
                                      min(cfg.mcq_injected_index, len(generated)))
    except ValidationError as exc:
        logger.warning("note %s: %s", note.note_id, exc)
        return fallback(option_raw)

    question = render_mcq_question(blank, option_set)
    answer_raw = gateway.chat(question)
    chosen = parse_mcq_response(answer_raw, option_set)
    if chosen is None:
        logger.warning("note %s: choice reply did not resolve", note.note_id)
        return fallback(answer_raw)
    if chosen == option_set.injected_text:
        return CorrectionResult(note.note_id, 0, -1, NO_ERROR_CORRECTION,
                                None, answer_raw, "mcq")
    correction = blank.sentence.replace(BLANK_PLACEHOLDER, chosen, 1)
    return CorrectionResult(note.note_id, 1, blank.sid, correction,
                            None, answer_raw, "mcq")


@dataclass
class RunResult:
    """Everything a dataset run produces."""

    results: List[CorrectionResult]
    failures: List[dict]
    manifest: dict

    @property
    def failure_rate(self) -> float:
        n = self.manifest["n_items"]
        return len(self.failures) / n if n else 0.0


def run_dataset(dataset: Dataset, cfg: StrategyConfig, gateway: LlmGateway,
                predictor=None, pool: Optional[ExamplePool] = None,
                bank: Optional[ReasonBank] = None) -> RunResult:
    """Run one strategy over a whole dataset.

    Notes are processed concurrently up to the gateway's parallelism
    bound; results come back sorted by note id. A note whose processing
    raises is recorded as a failure and contributes the no-error fallback
    so downstream files stay aligned with the dataset.
    """
    started_at = datetime.now(timezone.utc).isoformat()

    def process(note: ClinicalNote) -> CorrectionResult:
        if cfg.strategy == "mcq":
            return run_mcq(note, cfg, gateway, predictor)
        return run_e2e(note, cfg, gateway, pool=pool, bank=bank,
                       predictor=predictor)

    notes = [record.note for record in dataset]
    results: Dict[str, CorrectionResult] = {}
    failures: List[dict] = []
    with ThreadPoolExecutor(max_workers=gateway.config.max_parallel) as executor:
        futures = {executor.submit(process, note): note for note in notes}
        for future, note in futures.items():
            try:
                results[note.note_id] = future.result()
            except MedcorrectError as exc:
                logger.warning("note %s failed: %s", note.note_id, exc)
                failures.append({"note_id": note.note_id, "error": str(exc)})
                results[note.note_id] = CorrectionResult(
                    note.note_id, 0, -1, NO_ERROR_CORRECTION,
                    None, "", cfg.strategy)
    finished_at = datetime.now(timezone.utc).isoformat()
    manifest = {
        "strategy": cfg.strategy,
        "config_hash": config_digest(cfg, gateway.config.sampling_key()),
        "template_version": TEMPLATE_VERSION,
        "model_name": gateway.config.model_name,
        "started_at": started_at,
        "finished_at": finished_at,
        "n_items": len(notes),
        "n_failures": len(failures),
    }
    ordered = [results[note_id] for note_id in sorted(results)]
    failures.sort(key=lambda row: row["note_id"])
    return RunResult(results=ordered, failures=failures, manifest=manifest)


def result_to_json(result: CorrectionResult) -> dict:
    row = {
        "note_id": result.note_id,
        "error_flag": result.error_flag,
        "error_sid": result.error_sid,
        "correction": result.correction,
    }
    if result.reason is not None:
        row["reason"] = result.reason
    row["strategy"] = result.strategy
    row["raw_response"] = result.raw_response
    return row


def save_run(run_dir: str, run: RunResult) -> None:
    """Write predictions, failures, and the manifest under run_dir."""
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "predictions.jsonl"), "w",
              encoding="utf-8") as handle:
        for result in run.results:
            handle.write(json.dumps(result_to_json(result),
                                    ensure_ascii=False) + "\n")
    with open(os.path.join(run_dir, "failures.jsonl"), "w",
              encoding="utf-8") as handle:
        for row in run.failures:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    with open(os.path.join(run_dir, "manifest.json"), "w",
              encoding="utf-8") as handle:
        json.dump(run.manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_predictions(path: str) -> Dict[str, CorrectionResult]:
    """Read a predictions file back into results keyed by note id."""
    predictions: Dict[str, CorrectionResult] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                result = CorrectionResult(
                    note_id=row["note_id"],
                    error_flag=int(row["error_flag"]),
                    error_sid=int(row["error_sid"]),
                    correction=row["correction"],
                    reason=row.get("reason"),
                    raw_response=row.get("raw_response", ""),
                    strategy=row.get("strategy", "e2e"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad prediction row: {exc}") from exc
            if result.note_id in predictions:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate prediction for note "
                    f"{result.note_id}")
            predictions[result.note_id] = result
    return predictions


def build_icl_bank(dataset: Dataset, style: str, gateway: LlmGateway,
                   path: str) -> Tuple[ReasonBank, List[dict]]:
    """Generate one stored rationale per labelled record.

    Existing entries in the bank file are kept, so an interrupted build
    picks up where it stopped. Returns the bank and any per-record
    failures.
    """
    if style not in COT_STYLES[1:]:
        raise ConfigError(f"rationales only exist for reasoning styles, got {style!r}")
    if not dataset.has_labels():
        raise ConfigError("reason-bank building needs labelled data")
    bank = ReasonBank.load(path) if os.path.exists(path) else ReasonBank()
    failures: List[dict] = []
    for record in dataset:
        note_id = record.note.note_id
        if bank.has(note_id, style):
            continue
        request = render_reason_request(record.note, record.gold, style)
        try:
            raw = gateway.chat(request)
        except MedcorrectError as exc:
            logger.warning("reason for note %s failed: %s", note_id, exc)
            failures.append({"note_id": note_id, "error": str(exc)})
            continue
        reason = raw.strip()
        if not reason:
            failures.append({"note_id": note_id, "error": "empty reason reply"})
            continue
        bank.put(note_id, style, reason)
    bank.save(path)
    return bank, failures
