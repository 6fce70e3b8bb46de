import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medcorrect.errors import ValidationError
from medcorrect.retrieval import (build_index, load_index, save_index,
                                  tokenize, top_k)


def brute_force_scores(docs, query, k1=1.5, b=0.75):
    """Reference implementation kept deliberately naive.

    Sums one contribution per query token occurrence, matching the
    defining formula's sum over the query terms q_1..q_n.
    """
    tokenized = {doc_id: tokenize(text) for doc_id, text in docs}
    n_docs = len(docs)
    avgdl = sum(len(t) for t in tokenized.values()) / n_docs
    scores = {}
    for doc_id, tokens in tokenized.items():
        score = 0.0
        for term in tokenize(query):
            df = sum(1 for t in tokenized.values() if term in t)
            tf = tokens.count(term)
            if df == 0 or tf == 0:
                continue
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            denom = tf + k1 * (1.0 - b + b * len(tokens) / avgdl)
            score += idf * tf * (k1 + 1.0) / denom
        scores[doc_id] = score
    return scores


def test_tokenize_lowercases_and_splits_on_non_alnum():
    assert tokenize("Fever, cough; 99.1F!") == ["fever", "cough", "99", "1f"]
    assert tokenize("") == []
    assert tokenize("---") == []


def test_single_term_score_matches_hand_computation():
    docs = [("d1", "fever cough"), ("d2", "fever rash"), ("d3", "headache")]
    index = build_index(docs)
    ranked = top_k(index, "fever", k=3)
    # tf=1, df=2, N=3, dl=2, avgdl=2: idf=ln(1.6), tf term = 2.5/2.725
    expected = math.log(1.6) * 2.5 / 2.725
    assert ranked[0][0] in {"d1", "d2"}
    assert ranked[0][1] == pytest.approx(0.4312, abs=5e-5)
    assert ranked[0][1] == pytest.approx(expected, abs=1e-12)
    # d1 and d2 tie exactly; ascending doc id breaks the tie
    assert [doc_id for doc_id, _ in ranked[:2]] == ["d1", "d2"]
    assert ranked[2] == ("d3", 0.0)


def test_top_k_excludes_requested_ids():
    docs = [("d1", "fever cough"), ("d2", "fever rash"), ("d3", "headache")]
    index = build_index(docs)
    ranked = top_k(index, "fever", k=3, exclude_ids=("d1",))
    assert [doc_id for doc_id, _ in ranked] == ["d2", "d3"]


def test_top_k_truncates_to_k():
    docs = [("d%d" % i, "fever term%d" % i) for i in range(10)]
    index = build_index(docs)
    assert len(top_k(index, "fever", k=4)) == 4


def test_build_index_rejects_duplicates_and_empty():
    with pytest.raises(ValidationError):
        build_index([("d1", "a"), ("d1", "b")])
    with pytest.raises(ValidationError):
        build_index([])


def test_matches_brute_force_on_random_corpora():
    rng = random.Random(7)
    vocab = ["fever", "cough", "rash", "pain", "x", "note", "chest", "scan"]
    for trial in range(20):
        n_docs = rng.randint(2, 30)
        docs = []
        for i in range(n_docs):
            words = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
            docs.append(("doc%03d" % i, " ".join(words)))
        query = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 4)))
        index = build_index(docs)
        expected = brute_force_scores(docs, query)
        got = dict(top_k(index, query, k=n_docs))
        assert set(got) == set(expected)
        for doc_id in expected:
            assert got[doc_id] == pytest.approx(expected[doc_id], abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abc ", min_size=1, max_size=20),
                min_size=1, max_size=8))
def test_scores_are_finite_and_nonnegative(texts):
    docs = [("d%d" % i, t) for i, t in enumerate(texts)]
    index = build_index(docs)
    for _, score in top_k(index, "a b c", k=len(docs)):
        assert score >= 0.0
        assert math.isfinite(score)


def test_idf_is_positive_even_for_common_terms():
    # every doc contains the term; the +1 inside the log keeps idf > 0
    docs = [("d%d" % i, "fever") for i in range(5)]
    index = build_index(docs)
    ranked = top_k(index, "fever", k=5)
    assert all(score > 0.0 for _, score in ranked)


def test_index_roundtrip(tmp_path):
    docs = [("d1", "fever cough"), ("d2", "fever rash"), ("d3", "headache")]
    index = build_index(docs)
    path = tmp_path / "bm25.idx"
    save_index(index, path)
    loaded = load_index(path, index.corpus_hash)
    assert top_k(loaded, "fever cough", k=3) == top_k(index, "fever cough",
                                                      k=3)


def test_load_detects_stale_corpus(tmp_path):
    docs = [("d1", "fever cough"), ("d2", "fever rash")]
    index = build_index(docs)
    path = tmp_path / "bm25.idx"
    save_index(index, path)
    changed = build_index(docs + [("d3", "headache")])
    with pytest.raises(ValidationError) as info:
        load_index(path, changed.corpus_hash)
    assert "stale" in str(info.value)


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.idx"
    path.write_bytes(b"not an index at all")
    with pytest.raises(ValidationError):
        load_index(path, "irrelevant")
