"""Okapi BM25 index for selecting in-context examples similar to a query note.

The idf uses the ln(1 + (N - df + 0.5)/(df + 0.5)) form so that terms
present in every document score 0 rather than negative.
"""

from __future__ import annotations

import hashlib
import math
import pickle
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from .errors import ValidationError

_CACHE_MAGIC = b"MCBM25v1"


def tokenize(text: str) -> List[str]:
    """Lowercase and split on any non-alphanumeric character."""
    tokens = []
    current = []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


@dataclass
class Bm25Index:
    k1: float
    b: float
    doc_ids: Tuple[str, ...]
    doc_tf: Dict[str, Counter] = field(repr=False)
    doc_len: Dict[str, int] = field(repr=False)
    df: Dict[str, int] = field(repr=False)
    avgdl: float = 0.0
    corpus_hash: str = ""

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)


def _corpus_hash(docs: Sequence[Tuple[str, str]]) -> str:
    h = hashlib.sha256()
    for doc_id, text in docs:
        h.update(doc_id.encode("utf-8"))
        h.update(b"\x00")
        h.update(text.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()


def build_index(
    docs: Iterable[Tuple[str, str]], k1: float = 1.5, b: float = 0.75
) -> Bm25Index:
    """Build a BM25 index over (doc_id, text) pairs."""
    if k1 <= 0:
        raise ValidationError(f"k1 must be positive, got {k1}")
    if not 0.0 <= b <= 1.0:
        raise ValidationError(f"b must be in [0, 1], got {b}")
    docs = list(docs)
    doc_ids: List[str] = []
    doc_tf: Dict[str, Counter] = {}
    doc_len: Dict[str, int] = {}
    df: Dict[str, int] = {}
    for doc_id, text in docs:
        if doc_id in doc_tf:
            raise ValidationError(f"duplicate doc_id {doc_id!r}")
        tokens = tokenize(text)
        doc_ids.append(doc_id)
        doc_tf[doc_id] = Counter(tokens)
        doc_len[doc_id] = len(tokens)
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    if not doc_ids:
        raise ValidationError("cannot build an index over an empty corpus")
    total = sum(doc_len.values())
    avgdl = total / len(doc_ids)
    return Bm25Index(
        k1=k1,
        b=b,
        doc_ids=tuple(doc_ids),
        doc_tf=doc_tf,
        doc_len=doc_len,
        df=df,
        avgdl=avgdl,
        corpus_hash=_corpus_hash(docs),
    )


def idf(index: Bm25Index, term: str) -> float:
    n = index.n_docs
    d = index.df.get(term, 0)
    return math.log(1.0 + (n - d + 0.5) / (d + 0.5))


def score(index: Bm25Index, query_tokens: Sequence[str], doc_id: str) -> float:
    """Okapi BM25 score of one document against a tokenized query."""
    if doc_id not in index.doc_tf:
        raise ValidationError(f"unknown doc_id {doc_id!r}")
    tf = index.doc_tf[doc_id]
    dl = index.doc_len[doc_id]
    total = 0.0
    for term in query_tokens:
        freq = tf.get(term, 0)
        if freq == 0 or term not in index.df:
            continue
        denom = freq + index.k1 * (1.0 - index.b + index.b * dl / index.avgdl)
        total += idf(index, term) * freq * (index.k1 + 1.0) / denom
    return total


def top_k(
    index: Bm25Index,
    query_text: str,
    k: int,
    exclude_ids: Iterable[str] = (),
) -> List[Tuple[str, float]]:
    """Top k documents by score descending, ties broken by ascending doc_id."""
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    excluded = set(exclude_ids)
    query_tokens = tokenize(query_text)
    scored = [
        (doc_id, score(index, query_tokens, doc_id))
        for doc_id in index.doc_ids
        if doc_id not in excluded
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def save_index(index: Bm25Index, path) -> None:
    """Write a binary cache with a versioned header and the corpus hash."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        pickle.dump(index, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_index(path, expected_corpus_hash: str) -> Bm25Index:
    """Load a cached index; raises ValidationError when stale or foreign."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise ValidationError(f"{path}: not a BM25 cache file")
        index = pickle.load(fh)
    if index.corpus_hash != expected_corpus_hash:
        raise ValidationError(f"{path}: cache is stale (corpus hash mismatch)")
    return index
