"""Tiny BERT-style QA model: encoding, decoding, and token-level metrics.

The encoder is randomly initialized and sized for memorization experiments
on small corpora; nothing is downloaded. Long contexts are handled with the
usual sliding window over overlapping features.
"""

import collections
import logging
import re
import string
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from transformers import BertConfig, BertForQuestionAnswering, BertTokenizerFast

from .errors import ValidationError

logger = logging.getLogger(__name__)

# fixed question applied when only a context is supplied (serving, export);
# training records carry their own question text
QUESTION = "Which part in the given clinical note is clinically incorrect?"


@dataclass(frozen=True)
class EncoderSettings:
    """Everything the tokenizer and decoder need to agree on."""

    max_length: int = 160
    stride: int = 48
    max_answer_tokens: int = 24

    def __post_init__(self):
        if self.max_length < 16:
            raise ValidationError("max_length is too small to fit a question")
        if not 0 < self.stride < self.max_length:
            raise ValidationError("stride must be positive and below max_length")
        if self.max_answer_tokens < 1:
            raise ValidationError("max_answer_tokens must be positive")


def make_tokenizer(vocab_file: str) -> BertTokenizerFast:
    return BertTokenizerFast(vocab_file)


def make_model(vocab_size: int, settings: EncoderSettings,
               hidden_size: int = 64, num_layers: int = 2,
               num_heads: int = 2) -> BertForQuestionAnswering:
    config = BertConfig(
        vocab_size=vocab_size,
        hidden_size=hidden_size,
        num_hidden_layers=num_layers,
        num_attention_heads=num_heads,
        intermediate_size=hidden_size * 2,
        max_position_embeddings=settings.max_length + 32,
    )
    return BertForQuestionAnswering(config)


@dataclass
class Feature:
    """One windowed view of a (question, context) pair."""

    input_ids: List[int]
    attention_mask: List[int]
    token_type_ids: List[int]
    offset_mapping: List[Optional[Tuple[int, int]]]
    start_position: Optional[int] = None
    end_position: Optional[int] = None


def encode(tokenizer: BertTokenizerFast, question: str, context: str,
           settings: EncoderSettings,
           answer: Optional[Tuple[int, int]] = None) -> List[Feature]:
    """Tokenize with overlap; when a character answer span is given, align
    it to token positions. Windows that do not contain the whole answer
    point both positions at [CLS]."""
    encoded = tokenizer(question, context, truncation="only_second",
                        max_length=settings.max_length, stride=settings.stride,
                        return_overflowing_tokens=True,
                        return_offsets_mapping=True, padding="max_length")
    features = []
    for index in range(len(encoded["input_ids"])):
        sequence_ids = encoded.sequence_ids(index)
        offsets = [
            offset if sequence_ids[pos] == 1 else None
            for pos, offset in enumerate(encoded["offset_mapping"][index])
        ]
        feature = Feature(input_ids=encoded["input_ids"][index],
                          attention_mask=encoded["attention_mask"][index],
                          token_type_ids=encoded["token_type_ids"][index],
                          offset_mapping=offsets)
        if answer is not None:
            feature.start_position, feature.end_position = \
                _align_answer(offsets, answer)
        features.append(feature)
    return features


def _align_answer(offsets: Sequence[Optional[Tuple[int, int]]],
                  answer: Tuple[int, int]) -> Tuple[int, int]:
    char_start, char_end = answer
    start_token = end_token = None
    for pos, offset in enumerate(offsets):
        if offset is None or offset[0] == offset[1]:
            continue
        if offset[0] <= char_start < offset[1]:
            start_token = pos
        if offset[0] < char_end <= offset[1]:
            end_token = pos
    if start_token is None or end_token is None:
        return 0, 0
    return start_token, end_token


def batch_tensors(features: Sequence[Feature]) -> dict:
    batch = {
        "input_ids": torch.tensor([f.input_ids for f in features]),
        "attention_mask": torch.tensor([f.attention_mask for f in features]),
        "token_type_ids": torch.tensor([f.token_type_ids for f in features]),
    }
    if features and features[0].start_position is not None:
        batch["start_positions"] = torch.tensor(
            [f.start_position for f in features])
        batch["end_positions"] = torch.tensor(
            [f.end_position for f in features])
    return batch


def decode_best_span(features: Sequence[Feature],
                     start_logits: torch.Tensor, end_logits: torch.Tensor,
                     context: str,
                     settings: EncoderSettings) -> Tuple[str, int, int]:
    """Pick the highest-scoring (start, end) pair over all windows.

    Only context tokens are eligible; the pair score is the sum of the two
    logits and ties resolve to the earliest start seen. The returned
    offsets always satisfy context[start:end] == text.
    """
    best = None  # (score, start_char, end_char)
    for index, feature in enumerate(features):
        positions = [pos for pos, offset in enumerate(feature.offset_mapping)
                     if offset is not None and offset[0] != offset[1]]
        if not positions:
            continue
        starts = start_logits[index]
        ends = end_logits[index]
        for start_pos in positions:
            for end_pos in positions:
                if end_pos < start_pos:
                    continue
                if end_pos - start_pos >= settings.max_answer_tokens:
                    continue
                score = float(starts[start_pos]) + float(ends[end_pos])
                char_start = feature.offset_mapping[start_pos][0]
                char_end = feature.offset_mapping[end_pos][1]
                candidate = (score, char_start, char_end)
                if best is None or score > best[0]:
                    best = candidate
    if best is None:
        raise ValidationError("no context tokens survived encoding")
    _, char_start, char_end = best
    return context[char_start:char_end], char_start, char_end


def predict_span(model: BertForQuestionAnswering,
                 tokenizer: BertTokenizerFast, context: str,
                 settings: EncoderSettings,
                 question: str = QUESTION) -> Tuple[str, int, int]:
    """Run the model over one context and return (text, start, end)."""
    features = encode(tokenizer, question, context, settings)
    batch = batch_tensors(features)
    model.eval()
    with torch.no_grad():
        output = model(**batch)
    return decode_best_span(features, output.start_logits,
                            output.end_logits, context, settings)


# ----------------------------------------------------------- SQuAD metrics

_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in string.punctuation)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = collections.Counter(pred_tokens) & collections.Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)
