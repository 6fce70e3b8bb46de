"""Robustness analyses over correction runs.

Covers three questions: does performance depend on where in the note the
error sits (rank tests over position bins), on the persona named in the
system prompt (role sweep), and on where the predicted span lands in the
option list (position swap)?

The rank statistics are written out directly from their defining formulas
because the degenerate all-ties case needs an explicit convention (H = 0,
p = 1) and tie correction must match between the omnibus and post-hoc
tests.
"""

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from statistics import fmean, quantiles
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from scipy.special import gammaincc

from .corpus import Dataset
from .errors import ConfigError, ValidationError
from .evaluation import MetricReport, evaluate_predictions, score_correction
from .gateway import LlmGateway
from .pipelines import (CorrectionResult, RunResult, StrategyConfig,
                        config_digest, run_dataset)
from .prompts import PERSONAS

logger = logging.getLogger(__name__)

POSITION_BINS = ("beginning", "middle", "end")
ADJUSTMENTS = ("none", "bonferroni")


def bin_position(sid: int, n_sentences: int) -> str:
    """Classify a sentence position; a one-sentence note is beginning."""
    if n_sentences < 1:
        raise ValidationError("note must have at least one sentence")
    if not 0 <= sid < n_sentences:
        raise ValidationError(
            f"sentence id {sid} out of range for {n_sentences} sentences")
    if sid == 0:
        return "beginning"
    if sid == n_sentences - 1:
        return "end"
    return "middle"


@dataclass(frozen=True)
class HTestResult:
    """Kruskal-Wallis omnibus outcome."""

    h: float
    df: int
    p: float
    group_sizes: Tuple[int, ...]

    def __post_init__(self):
        if self.h < 0:
            raise ValidationError("H statistic cannot be negative")
        if self.df != len(self.group_sizes) - 1:
            raise ValidationError("df must be one less than the group count")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError("p-value out of [0, 1]")


@dataclass(frozen=True)
class DunnResult:
    """Pairwise post-hoc p-values, keyed by group index pairs (i < j)."""

    p_values: Mapping[Tuple[int, int], float]
    adjustment: str

    def __post_init__(self):
        if self.adjustment not in ADJUSTMENTS:
            raise ValidationError(f"unknown adjustment {self.adjustment!r}")
        for (i, j), p in self.p_values.items():
            if i >= j:
                raise ValidationError("pair keys must satisfy i < j")
            if not 0.0 <= p <= 1.0:
                raise ValidationError("p-value out of [0, 1]")

    def p(self, i: int, j: int) -> float:
        if i == j:
            raise ValidationError("no self-comparison in post-hoc results")
        return self.p_values[(min(i, j), max(i, j))]


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if x < 0:
        raise ValidationError("chi-square statistic cannot be negative")
    if df < 1:
        raise ValidationError("degrees of freedom must be at least 1")
    return float(gammaincc(df / 2.0, x / 2.0))


def _pooled_ranks(values: Sequence[float]) -> List[float]:
    """Mid-ranks (1-based), ties sharing their average rank."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        average = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = average
        i = j + 1
    return ranks


def _check_groups(groups: Sequence[Sequence[float]]) -> List[List[float]]:
    cleaned = [list(g) for g in groups]
    if len(cleaned) < 2:
        raise ValidationError("rank tests need at least two groups")
    for i, group in enumerate(cleaned):
        if not group:
            raise ValidationError(f"group {i} is empty")
    if sum(len(g) for g in cleaned) < 3:
        raise ValidationError("rank tests need at least three observations")
    return cleaned


def _tie_term(pooled: Sequence[float]) -> float:
    return sum(t ** 3 - t for t in Counter(pooled).values())


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> HTestResult:
    """Rank-based k-sample test with tie correction.

    When every observation is identical the statistic is defined as 0
    with p = 1 (the tie-correction denominator vanishes).
    """
    cleaned = _check_groups(groups)
    sizes = tuple(len(g) for g in cleaned)
    pooled = [v for g in cleaned for v in g]
    n = len(pooled)
    ranks = _pooled_ranks(pooled)
    df = len(cleaned) - 1

    correction = 1.0 - _tie_term(pooled) / (n ** 3 - n)
    if correction == 0.0:
        return HTestResult(h=0.0, df=df, p=1.0, group_sizes=sizes)

    h_raw = 0.0
    offset = 0
    for size in sizes:
        mean_rank = fmean(ranks[offset:offset + size])
        h_raw += size * mean_rank ** 2
        offset += size
    h_raw = 12.0 / (n * (n + 1)) * h_raw - 3.0 * (n + 1)
    h = max(h_raw / correction, 0.0)
    return HTestResult(h=h, df=df, p=chi2_sf(h, df), group_sizes=sizes)


def dunn_posthoc(groups: Sequence[Sequence[float]],
                 adjustment: str = "none") -> DunnResult:
    """Pairwise mean-rank comparisons following a Kruskal-Wallis test.

    Two-sided p from the standard normal; the bonferroni option
    multiplies by the number of pairs and caps at 1.
    """
    if adjustment not in ADJUSTMENTS:
        raise ConfigError(f"unknown adjustment {adjustment!r}")
    cleaned = _check_groups(groups)
    sizes = [len(g) for g in cleaned]
    pooled = [v for g in cleaned for v in g]
    n = len(pooled)
    ranks = _pooled_ranks(pooled)

    mean_ranks = []
    offset = 0
    for size in sizes:
        mean_ranks.append(fmean(ranks[offset:offset + size]))
        offset += size

    variance_base = n * (n + 1) / 12.0 - _tie_term(pooled) / (12.0 * (n - 1))
    n_pairs = len(cleaned) * (len(cleaned) - 1) // 2
    p_values: Dict[Tuple[int, int], float] = {}
    for i in range(len(cleaned)):
        for j in range(i + 1, len(cleaned)):
            spread = variance_base * (1.0 / sizes[i] + 1.0 / sizes[j])
            if spread <= 0.0:
                p_raw = 1.0
            else:
                z = (mean_ranks[i] - mean_ranks[j]) / math.sqrt(spread)
                p_raw = math.erfc(abs(z) / math.sqrt(2.0))
            if adjustment == "bonferroni":
                p_raw = min(1.0, p_raw * n_pairs)
            p_values[(i, j)] = p_raw
    return DunnResult(p_values=p_values, adjustment=adjustment)


@dataclass(frozen=True)
class BinSummary:
    """Distribution summary of per-item scores in one position bin."""

    n: int
    mean: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


@dataclass(frozen=True)
class PositionAnalysis:
    """Per-bin score distributions plus the rank tests when runnable."""

    metric: str
    bins: Dict[str, BinSummary]
    bin_order: Tuple[str, ...]
    h_test: Optional[HTestResult]
    dunn: Optional[Dict[Tuple[str, str], float]]
    dunn_adjustment: str


def _summarize(scores: Sequence[float]) -> BinSummary:
    if len(scores) == 1:
        value = scores[0]
        return BinSummary(n=1, mean=value, minimum=value, q1=value,
                          median=value, q3=value, maximum=value)
    q1, median, q3 = quantiles(scores, n=4, method="inclusive")
    return BinSummary(n=len(scores), mean=fmean(scores), minimum=min(scores),
                      q1=q1, median=median, q3=q3, maximum=max(scores))


def position_analysis(dataset: Dataset,
                      preds: Mapping[str, CorrectionResult],
                      metric: str = "rouge1",
                      external: Optional[Mapping[str, Mapping[str, float]]] = None,
                      adjustment: str = "none") -> PositionAnalysis:
    """Group per-item scores by gold error position and run the rank tests.

    Only gold-error items participate. The tests are skipped (with the
    distributions still reported) when fewer than two bins are populated
    or any populated bin holds fewer than two items.
    """
    if not dataset.has_labels():
        raise ValidationError("position analysis needs gold labels")
    grouped: Dict[str, List[float]] = {}
    for record in dataset:
        if record.gold.error_flag == 0:
            continue
        note_id = record.note.note_id
        if note_id not in preds:
            raise ValidationError(f"missing prediction for note {note_id}")
        row = external.get(note_id) if external else None
        scores = score_correction(preds[note_id], record.gold, row)
        if metric not in scores:
            raise ValidationError(
                f"metric {metric!r} unavailable for note {note_id}")
        position = bin_position(record.gold.error_sid,
                                len(record.note.sentences))
        grouped.setdefault(position, []).append(scores[metric])
    if not grouped:
        raise ValidationError("no gold-error items to analyse")

    bin_order = tuple(b for b in POSITION_BINS if b in grouped)
    summaries = {b: _summarize(grouped[b]) for b in bin_order}

    h_test = None
    dunn_by_bins = None
    runnable = len(bin_order) >= 2 and all(
        len(grouped[b]) >= 2 for b in bin_order)
    if runnable:
        groups = [grouped[b] for b in bin_order]
        h_test = kruskal_wallis(groups)
        dunn = dunn_posthoc(groups, adjustment)
        dunn_by_bins = {(bin_order[i], bin_order[j]): p
                        for (i, j), p in dunn.p_values.items()}
    else:
        logger.warning(
            "rank tests skipped: bins %s with sizes %s",
            bin_order, [len(grouped[b]) for b in bin_order])
    return PositionAnalysis(metric=metric, bins=summaries,
                            bin_order=bin_order, h_test=h_test,
                            dunn=dunn_by_bins, dunn_adjustment=adjustment)


def position_analysis_to_json(analysis: PositionAnalysis) -> dict:
    payload = {
        "metric": analysis.metric,
        "bins": {name: vars(summary).copy()
                 for name, summary in analysis.bins.items()},
        "bin_order": list(analysis.bin_order),
        "dunn_adjustment": analysis.dunn_adjustment,
        "h_test": None,
        "dunn": None,
    }
    if analysis.h_test is not None:
        payload["h_test"] = {"h": analysis.h_test.h, "df": analysis.h_test.df,
                             "p": analysis.h_test.p,
                             "group_sizes": list(analysis.h_test.group_sizes)}
    if analysis.dunn is not None:
        payload["dunn"] = {f"{a}|{b}": p
                           for (a, b), p in sorted(analysis.dunn.items())}
    return payload


def save_position_csv(analysis: PositionAnalysis, path: str) -> None:
    """Per-bin quartile rows for external plotting."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin", "n", "mean", "min", "q1", "median", "q3", "max"])
        for name in analysis.bin_order:
            s = analysis.bins[name]
            writer.writerow([name, s.n, s.mean, s.minimum, s.q1, s.median,
                             s.q3, s.maximum])


@dataclass
class SweepResult:
    """Reports and raw runs from a multi-configuration sweep."""

    reports: Dict[str, MetricReport]
    runs: Dict[str, RunResult]
    masked_config_hash: Optional[str] = None


def role_sweep(dataset: Dataset, base_cfg: StrategyConfig,
               gateway: LlmGateway, roles: Sequence[str] = PERSONAS,
               predictor=None, pool=None, bank=None,
               external: Optional[Mapping[str, Mapping[str, float]]] = None,
               ) -> SweepResult:
    """One full run per persona, everything else held constant.

    The constancy claim is checked, not assumed: every run's config hash
    with the persona masked out must be identical.
    """
    if not roles:
        raise ConfigError("role sweep needs at least one role")
    reports: Dict[str, MetricReport] = {}
    runs: Dict[str, RunResult] = {}
    masked_hashes = set()
    for role in roles:
        cfg = replace(base_cfg,
                      prompt_spec=replace(base_cfg.prompt_spec, persona=role))
        masked_hashes.add(config_digest(cfg, gateway.config.sampling_key(),
                                        mask_persona=True))
        run = run_dataset(dataset, cfg, gateway, predictor=predictor,
                          pool=pool, bank=bank)
        preds = {r.note_id: r for r in run.results}
        reports[role] = evaluate_predictions(dataset, preds, external)
        runs[role] = run
    if len(masked_hashes) != 1:
        raise ValidationError(
            "role sweep runs differ beyond the persona; refusing to compare")
    return SweepResult(reports=reports, runs=runs,
                       masked_config_hash=masked_hashes.pop())


def mcq_position_experiment(dataset: Dataset, cfg: StrategyConfig,
                            gateway: LlmGateway, predictor,
                            external: Optional[Mapping[str, Mapping[str, float]]] = None,
                            ) -> SweepResult:
    """Two blank-and-choose runs differing only in where the span sits.

    Row "A" injects the predicted span as the first option, row "B" as
    the second; with two total options this swaps the span and the
    generated alternative.
    """
    if cfg.strategy != "mcq":
        raise ConfigError("position experiment requires the mcq strategy")
    if cfg.mcq_total_options != 2:
        raise ConfigError("position experiment requires 2 total options")
    reports: Dict[str, MetricReport] = {}
    runs: Dict[str, RunResult] = {}
    for label, index in (("A", 0), ("B", 1)):
        run_cfg = replace(cfg, mcq_injected_index=index)
        run = run_dataset(dataset, run_cfg, gateway, predictor=predictor)
        preds = {r.note_id: r for r in run.results}
        reports[label] = evaluate_predictions(dataset, preds, external)
        runs[label] = run
    return SweepResult(reports=reports, runs=runs)
