"""Training loop: fine-tune the QA encoder and keep the best checkpoint.

Checkpoint directory layout:

    <checkpoint_dir>/
        vocab.txt           corpus-derived vocabulary
        metrics.jsonl       one row per epoch: epoch, loss, em, f1
        epoch-001/ ...      model + tokenizer + encoder settings
        best -> epoch-NNN   symlink, highest validation F1, earlier epoch
                            wins ties
"""

import json
import logging
import os
import random
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import torch

from .data import QaRecord, build_vocab, save_vocab
from .errors import TrainingError, ValidationError
from .model import (EncoderSettings, batch_tensors, encode, exact_match,
                    make_model, make_tokenizer, predict_span, token_f1)

logger = logging.getLogger(__name__)

SETTINGS_FILE = "encoder_settings.json"


@dataclass
class TrainJob:
    """One training run over pre-built QA records."""

    train_records: Sequence[QaRecord]
    eval_records: Sequence[QaRecord]
    checkpoint_dir: str
    epochs: int = 40
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 13
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 2
    settings: EncoderSettings = field(default_factory=EncoderSettings)
    stop_em: Optional[float] = None

    def __post_init__(self):
        if not self.train_records:
            raise ValidationError("training needs at least one record")
        if not self.eval_records:
            raise ValidationError("evaluation needs at least one record")
        for record in list(self.train_records) + list(self.eval_records):
            if record.answer_text is None:
                raise ValidationError(
                    f"record {record.id} has no answer; only error-containing "
                    "records can train the span model")
        if self.epochs < 1:
            raise ValidationError("epochs must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    em: float
    f1: float


@dataclass
class TrainResult:
    checkpoint_dir: str
    best_path: str
    best_epoch: int
    best_em: float
    best_f1: float
    history: List[EpochMetrics]


def _save_checkpoint(path, model, tokenizer, settings):
    os.makedirs(path, exist_ok=True)
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    with open(os.path.join(path, SETTINGS_FILE), "w",
              encoding="utf-8") as handle:
        json.dump({"max_length": settings.max_length,
                   "stride": settings.stride,
                   "max_answer_tokens": settings.max_answer_tokens},
                  handle, indent=2)


def _evaluate(model, tokenizer, records, settings):
    em_total = f1_total = 0.0
    for record in records:
        text, _, _ = predict_span(model, tokenizer, record.context, settings,
                                  question=record.question)
        em_total += exact_match(text, record.answer_text)
        f1_total += token_f1(text, record.answer_text)
    return em_total / len(records), f1_total / len(records)


def train(job: TrainJob) -> TrainResult:
    """Run the job and return where the best checkpoint lives."""
    torch.manual_seed(job.seed)
    rng = random.Random(job.seed)
    os.makedirs(job.checkpoint_dir, exist_ok=True)

    vocab = build_vocab(list(job.train_records) + list(job.eval_records))
    vocab_path = os.path.join(job.checkpoint_dir, "vocab.txt")
    save_vocab(vocab, vocab_path)
    tokenizer = make_tokenizer(vocab_path)
    model = make_model(len(vocab), job.settings, hidden_size=job.hidden_size,
                       num_layers=job.num_layers, num_heads=job.num_heads)

    features = []
    for record in job.train_records:
        features.extend(encode(tokenizer, record.question, record.context,
                               job.settings,
                               answer=(record.answer_start,
                                       record.answer_end)))
    if not features:
        raise TrainingError("no training features after encoding")
    logger.info("training on %d features from %d records",
                len(features), len(job.train_records))

    optimizer = torch.optim.AdamW(model.parameters(), lr=job.learning_rate)
    metrics_path = os.path.join(job.checkpoint_dir, "metrics.jsonl")
    history: List[EpochMetrics] = []
    best: Optional[EpochMetrics] = None
    best_dir = None

    with open(metrics_path, "w", encoding="utf-8") as metrics_file:
        for epoch in range(1, job.epochs + 1):
            model.train()
            order = list(range(len(features)))
            rng.shuffle(order)
            losses = []
            for lower in range(0, len(order), job.batch_size):
                chunk = [features[i]
                         for i in order[lower:lower + job.batch_size]]
                batch = batch_tensors(chunk)
                output = model(**batch)
                optimizer.zero_grad()
                output.loss.backward()
                optimizer.step()
                losses.append(float(output.loss.detach()))

            em, f1 = _evaluate(model, tokenizer, job.eval_records,
                               job.settings)
            row = EpochMetrics(epoch=epoch, loss=sum(losses) / len(losses),
                               em=em, f1=f1)
            history.append(row)
            metrics_file.write(json.dumps(vars(row)) + "\n")
            metrics_file.flush()
            logger.info("epoch %d: loss %.4f em %.3f f1 %.3f",
                        epoch, row.loss, em, f1)

            epoch_dir = os.path.join(job.checkpoint_dir, f"epoch-{epoch:03d}")
            _save_checkpoint(epoch_dir, model, tokenizer, job.settings)
            if best is None or f1 > best.f1:
                best = row
                best_dir = epoch_dir
            if job.stop_em is not None and em >= job.stop_em:
                logger.info("early stop: em %.3f reached %.3f",
                            em, job.stop_em)
                break

    link = os.path.join(job.checkpoint_dir, "best")
    if os.path.lexists(link):
        os.remove(link)
    os.symlink(os.path.basename(best_dir), link)
    return TrainResult(checkpoint_dir=job.checkpoint_dir, best_path=link,
                       best_epoch=best.epoch, best_em=best.em,
                       best_f1=best.f1, history=history)
