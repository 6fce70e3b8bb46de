"""Scoring of correction runs.

Implements the shared-output scoring contract: binary flag accuracy,
sentence-id accuracy, and NLG overlap between predicted and reference
corrections, macro-averaged over note sources.

Scoring protocol for a (prediction, gold) pair:
  - both say no error: every NLG metric scores 1.0;
  - exactly one says no error: every NLG metric scores 0.0;
  - both give a correction: the metric is applied to the two sentences.
A predicted sentence id of -1 matching a gold -1 counts as a correct
sentence id. Model-based metric scores (bertscore, bleurt) are read from
a sidecar file, never computed here.
"""

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass
from statistics import fmean
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .corpus import Dataset, GoldLabel, Record
from .errors import ParseError, ValidationError
from .pipelines import CorrectionResult
from .retrieval import tokenize

logger = logging.getLogger(__name__)

EXTERNAL_METRICS = ("bertscore", "bleurt")
SIDECAR_COLUMNS = ("note_id", "bertscore", "bleurt")


@dataclass(frozen=True)
class MetricReport:
    """Scores for one source, or macro-averaged across sources."""

    acc_flag: float
    acc_sent_id: float
    rouge1: float
    bertscore: Optional[float]
    bleurt: Optional[float]
    score_agg: Optional[float]
    n_items: int
    per_source: Optional[Dict[str, "MetricReport"]] = None

    def __post_init__(self):
        values = {"acc_flag": self.acc_flag, "acc_sent_id": self.acc_sent_id,
                  "rouge1": self.rouge1, "bertscore": self.bertscore,
                  "bleurt": self.bleurt, "score_agg": self.score_agg}
        for name, value in values.items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} out of [0, 1]: {value}")
        if self.score_agg is not None and (self.bertscore is None
                                           or self.bleurt is None):
            raise ValidationError(
                "aggregate score requires both model-based metrics")
        if self.n_items < 1:
            raise ValidationError("a report needs at least one item")


def rouge1_f(candidate: str, reference: str) -> float:
    """Unigram-overlap F1 on lowercased alphanumeric tokens."""
    cand = Counter(tokenize(candidate))
    ref = Counter(tokenize(reference))
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


def _align(preds: Mapping[str, CorrectionResult],
           dataset: Dataset) -> List[Tuple[CorrectionResult, Record]]:
    if len(dataset) == 0:
        raise ValidationError("nothing to evaluate: empty dataset")
    if not dataset.has_labels():
        raise ValidationError("evaluation needs gold labels")
    wanted = {record.note.note_id for record in dataset}
    missing = sorted(wanted - set(preds))
    if missing:
        raise ValidationError(
            f"missing predictions for {len(missing)} notes "
            f"(first: {missing[:3]})")
    extra = sorted(set(preds) - wanted)
    if extra:
        raise ValidationError(
            f"predictions for notes not in the dataset (first: {extra[:3]})")
    return [(preds[record.note.note_id], record) for record in dataset]


def acc_flag(preds: Mapping[str, CorrectionResult], dataset: Dataset) -> float:
    pairs = _align(preds, dataset)
    return fmean(
        1.0 if pred.error_flag == record.gold.error_flag else 0.0
        for pred, record in pairs)


def acc_sent_id(preds: Mapping[str, CorrectionResult], dataset: Dataset) -> float:
    pairs = _align(preds, dataset)
    return fmean(
        1.0 if pred.error_sid == record.gold.error_sid else 0.0
        for pred, record in pairs)


def protocol_score(pred: CorrectionResult, gold: GoldLabel,
                   metric: Callable[[str, str], float]) -> float:
    """Apply one NLG metric under the no-error protocol."""
    pred_clean = pred.error_flag == 0
    gold_clean = gold.error_flag == 0
    if pred_clean and gold_clean:
        return 1.0
    if pred_clean != gold_clean:
        return 0.0
    return metric(pred.correction, gold.corrected_sentence)


def score_correction(pred: CorrectionResult, gold: GoldLabel,
                     external_row: Optional[Mapping[str, float]] = None,
                     ) -> Dict[str, float]:
    """Per-metric scores for one item.

    Always includes rouge1; includes bertscore/bleurt when the sidecar
    row provides them.
    """
    scores = {"rouge1": protocol_score(pred, gold, rouge1_f)}
    if external_row:
        for name in EXTERNAL_METRICS:
            if name in external_row:
                scores[name] = protocol_score(
                    pred, gold, lambda _c, _r, v=external_row[name]: v)
    return scores


def aggregate(rouge1: float, bertscore: Optional[float],
              bleurt: Optional[float]) -> float:
    """Arithmetic mean of the three NLG components."""
    if bertscore is None or bleurt is None:
        raise ValidationError("aggregate score requires all three components")
    return (rouge1 + bertscore + bleurt) / 3.0


def load_external_scores(path: str) -> Dict[str, Dict[str, float]]:
    """Read the sidecar of model-based metric scores.

    Tab-separated with a note_id/bertscore/bleurt header; scores must
    already be rescaled into [0, 1].
    """
    scores: Dict[str, Dict[str, float]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty sidecar file") from None
        if tuple(header) != SIDECAR_COLUMNS:
            raise ParseError(
                f"{path}: expected header {SIDECAR_COLUMNS}, got {tuple(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 columns")
            note_id, bert_raw, bleurt_raw = row
            try:
                values = {"bertscore": float(bert_raw), "bleurt": float(bleurt_raw)}
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric score") from exc
            for name, value in values.items():
                if not 0.0 <= value <= 1.0:
                    raise ValidationError(
                        f"{path}:{lineno}: {name} {value} outside [0, 1]")
            if note_id in scores:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate note_id {note_id}")
            scores[note_id] = values
    return scores


def _source_report(pairs: Sequence[Tuple[CorrectionResult, Record]],
                   external: Optional[Mapping[str, Mapping[str, float]]],
                   source: str) -> MetricReport:
    flags = fmean(1.0 if p.error_flag == r.gold.error_flag else 0.0
                  for p, r in pairs)
    sids = fmean(1.0 if p.error_sid == r.gold.error_sid else 0.0
                 for p, r in pairs)
    rouge = fmean(protocol_score(p, r.gold, rouge1_f) for p, r in pairs)

    optional: Dict[str, Optional[float]] = {}
    for name in EXTERNAL_METRICS:
        if external is None:
            optional[name] = None
            continue
        rows = [external.get(r.note.note_id, {}).get(name) for _, r in pairs]
        if all(v is not None for v in rows):
            optional[name] = fmean(
                protocol_score(p, r.gold, lambda _c, _r, v=v: v)
                for (p, r), v in zip(pairs, rows))
        else:
            n_have = sum(v is not None for v in rows)
            if n_have:
                logger.warning(
                    "source %s: %s present for %d of %d items; metric dropped",
                    source, name, n_have, len(pairs))
            optional[name] = None
    agg = None
    if optional["bertscore"] is not None and optional["bleurt"] is not None:
        agg = aggregate(rouge, optional["bertscore"], optional["bleurt"])
    return MetricReport(acc_flag=flags, acc_sent_id=sids, rouge1=rouge,
                        bertscore=optional["bertscore"],
                        bleurt=optional["bleurt"], score_agg=agg,
                        n_items=len(pairs))


def macro_average(per_source: Mapping[str, MetricReport]) -> MetricReport:
    """Unweighted mean over sources; optional metrics survive only when
    every source has them."""
    if not per_source:
        raise ValidationError("macro average needs at least one source")
    reports = list(per_source.values())

    def mean_of(getter):
        values = [getter(r) for r in reports]
        if any(v is None for v in values):
            return None
        return fmean(values)

    return MetricReport(
        acc_flag=mean_of(lambda r: r.acc_flag),
        acc_sent_id=mean_of(lambda r: r.acc_sent_id),
        rouge1=mean_of(lambda r: r.rouge1),
        bertscore=mean_of(lambda r: r.bertscore),
        bleurt=mean_of(lambda r: r.bleurt),
        score_agg=mean_of(lambda r: r.score_agg),
        n_items=sum(r.n_items for r in reports),
        per_source=dict(per_source))


def evaluate_predictions(dataset: Dataset,
                         preds: Mapping[str, CorrectionResult],
                         external: Optional[Mapping[str, Mapping[str, float]]] = None,
                         ) -> MetricReport:
    """Full scoring of a prediction set: per-source reports plus macro."""
    pairs = _align(preds, dataset)
    by_source: Dict[str, List[Tuple[CorrectionResult, Record]]] = {}
    for pred, record in pairs:
        by_source.setdefault(record.note.source, []).append((pred, record))
    per_source = {source: _source_report(by_source[source], external, source)
                  for source in sorted(by_source)}
    return macro_average(per_source)


def report_to_json(report: MetricReport) -> dict:
    row = {
        "acc_flag": report.acc_flag,
        "acc_sent_id": report.acc_sent_id,
        "rouge1": report.rouge1,
        "bertscore": report.bertscore,
        "bleurt": report.bleurt,
        "score_agg": report.score_agg,
        "n_items": report.n_items,
    }
    if report.per_source is not None:
        row["per_source"] = {source: report_to_json(sub)
                             for source, sub in report.per_source.items()}
    return row


def format_report(report: MetricReport) -> str:
    """Human-readable table, one row per source plus the macro row."""
    headers = ["", "n", "acc_flag", "acc_sent_id", "rouge1",
               "bertscore", "bleurt", "score_agg"]

    def cells(label: str, r: MetricReport) -> List[str]:
        def num(v):
            return "-" if v is None else f"{v:.4f}"
        return [label, str(r.n_items), num(r.acc_flag), num(r.acc_sent_id),
                num(r.rouge1), num(r.bertscore), num(r.bleurt),
                num(r.score_agg)]

    rows = [headers]
    if report.per_source:
        for source, sub in report.per_source.items():
            rows.append(cells(source, sub))
    rows.append(cells("macro", report))
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
             for row in rows]
    return "\n".join(lines)


def save_report(report: MetricReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report_to_json(report), handle, indent=2, sort_keys=True)
        handle.write("\n")
