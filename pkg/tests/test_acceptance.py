"""Release acceptance suite: one test per criterion, each under a wall-clock
budget, each reporting a single PASS/FAIL line via the terminal summary hook.

These tests deliberately recompute every expected value in place (brute-force
scoring, closed-form statistics, hand-tallied metrics) instead of importing
helpers from the library under test.
"""

import json
import math
import random
import time
from dataclasses import replace

import pytest

from medcorrect.evaluation import evaluate_predictions, rouge1_f
from medcorrect.gateway import BackendConfig, LlmGateway, MockScript
from medcorrect.pipelines import (CorrectionResult, StrategyConfig,
                                  run_dataset, run_e2e, run_mcq, save_run)
from medcorrect.prompts import (PERSONAS, BlankResult, PromptSpec,
                                assemble_options, blank_out_span,
                                render_e2e_prompt, render_mcq_option_request,
                                render_mcq_question, render_system_prompt)
from medcorrect.retrieval import build_index, tokenize, top_k
from medcorrect.sensitivity import (dunn_posthoc, kruskal_wallis,
                                    mcq_position_experiment, role_sweep)
from medcorrect.spans import GoldOracleSpanPredictor, exact_match, token_f1
from medcorrect.templates import BLANK_PLACEHOLDER

from conftest import (ACCEPTANCE_REPORT, STROKE_CORRECTION, golden,
                      make_dataset, make_record)

BOY_SPAN = "primary ciliary dyskinesia"


def run_criterion(name, budget_seconds, body):
    started = time.perf_counter()
    try:
        body()
    except BaseException:
        ACCEPTANCE_REPORT.append(f"[ACCEPTANCE] {name}: FAIL")
        raise
    elapsed = time.perf_counter() - started
    if elapsed >= budget_seconds:
        ACCEPTANCE_REPORT.append(
            f"[ACCEPTANCE] {name}: FAIL "
            f"(took {elapsed:.2f}s, budget {budget_seconds:g}s)")
        pytest.fail(f"{name} exceeded its {budget_seconds:g}s budget "
                    f"({elapsed:.2f}s)")
    ACCEPTANCE_REPORT.append(f"[ACCEPTANCE] {name}: PASS ({elapsed:.2f}s)")


# ------------------------------------------------------------ prompt fidelity

def test_acceptance_prompt_fidelity(stroke_note, boy_note):
    def body():
        assert render_system_prompt("clinician_assistant").content == \
            golden("system_prompt.txt")

        spec = PromptSpec(persona="clinician_assistant", shots=0,
                          cot_style="brief", type_hint=True,
                          span_hint="CTA of the head")
        messages = render_e2e_prompt(stroke_note, [], spec)
        assert messages[-1].content == golden("e2e_user_query.txt")

        blank = blank_out_span(boy_note, BOY_SPAN)
        for n, name in ((1, "mcq_option_request_1.txt"),
                        (3, "mcq_option_request_3.txt")):
            request = render_mcq_option_request(blank, BOY_SPAN, n)
            assert request[0].content == golden(name)

        two = assemble_options(["asthma"], BOY_SPAN, injected_index=1)
        assert render_mcq_question(blank, two)[0].content == \
            golden("mcq_question_2.txt")

        carrier = BlankResult(text=blank.text,
                              sentence="Culture tests indicate %s."
                                       % BLANK_PLACEHOLDER,
                              sid=blank.sid)
        four = assemble_options(["asthma", "bronchiolitis",
                                 "pulmonary embolism"], BOY_SPAN,
                                injected_index=1)
        assert render_mcq_question(carrier, four)[0].content == \
            golden("mcq_question_4.txt")

    run_criterion("prompt-fidelity", 1.0, body)


# ------------------------------------------------------ retrieval equivalence

def _reference_scores(docs, query, k1=1.5, b=0.75):
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


def test_acceptance_retrieval_oracle_equivalence():
    def body():
        rng = random.Random(20260822)
        vocab = ["fever", "cough", "rash", "pain", "nausea", "dizzy",
                 "fracture", "sepsis", "anemia", "edema", "biopsy",
                 "culture", "lesion", "murmur", "stroke"]
        for trial in range(50):
            n_docs = rng.randint(2, 200)
            docs = []
            for i in range(n_docs):
                if docs and rng.random() < 0.25:
                    # duplicate text forces score ties, exercising the
                    # ascending-doc-id tie break
                    text = docs[rng.randrange(len(docs))][1]
                else:
                    text = " ".join(rng.choices(vocab,
                                                k=rng.randint(1, 12)))
                docs.append((f"doc-{i:03d}", text))
            index = build_index(docs)
            query = " ".join(rng.choices(vocab, k=rng.randint(1, 5)))
            k = rng.choice([1, 3, 10, n_docs])
            expected_scores = _reference_scores(docs, query)
            expected = sorted(expected_scores.items(),
                              key=lambda item: (-item[1], item[0]))[:k]
            got = top_k(index, query, k)
            assert [doc_id for doc_id, _ in got] == \
                [doc_id for doc_id, _ in expected], f"trial {trial}"
            for (_, got_score), (_, want_score) in zip(got, expected):
                assert got_score == pytest.approx(want_score, abs=1e-9)

    run_criterion("retrieval-oracle-equivalence", 10.0, body)


# -------------------------------------------------------------- metric oracles

def test_acceptance_metric_oracles():
    def body():
        assert rouge1_f("the cat sat", "the cat") == \
            pytest.approx(0.8, abs=1e-9)
        assert token_f1("acute pyelonephritis", "pyelonephritis") == \
            pytest.approx(0.6667, abs=1e-4)
        # normalization: case, punctuation, articles, whitespace runs
        assert exact_match("The CT of the head.", "ct of head") == 1
        assert exact_match("an   MRI  scan", "MRI scan") == 1
        assert exact_match("pyelonephritis!", "Pyelonephritis") == 1
        assert exact_match("CT of the head", "CT of the chest") == 0

    run_criterion("metric-oracles", 1.0, body)


# ---------------------------------------------------------- statistics oracles

def test_acceptance_statistics_oracles():
    def body():
        kw = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        assert kw.h == pytest.approx(7.2, abs=1e-9)
        assert kw.p == pytest.approx(0.027324, abs=1e-6)

        dunn = dunn_posthoc([[1, 2, 3], [4, 5, 6]], adjustment="none")
        assert dunn.p(0, 1) == pytest.approx(0.0495, abs=1e-3)

        rng = random.Random(4711)
        for _ in range(100):
            groups = [[float(rng.randint(0, 10))
                       for _ in range(rng.randint(2, 8))]
                      for _ in range(rng.randint(2, 4))]
            base = kruskal_wallis(groups)
            shifted = kruskal_wallis([[2.0 * v + 1.0 for v in g]
                                      for g in groups])
            # a strictly increasing transform leaves every rank unchanged
            assert shifted.h == base.h
            assert shifted.p == base.p

    run_criterion("statistics-oracles", 5.0, body)


# ------------------------------------------------------------ pipeline contract

def test_acceptance_pipeline_contract(stroke_record, boy_record, tmp_path):
    def body():
        # scripted reference exchange through the hybrid span-hint path
        dataset = make_dataset([stroke_record])
        cfg = StrategyConfig(strategy="hybrid", predictor="gold_oracle",
                             prompt_spec=PromptSpec(type_hint=True,
                                                    cot_style="brief"))
        hinted = replace(cfg.prompt_spec, span_hint="CTA of the head")
        script = MockScript()
        script.script(render_e2e_prompt(stroke_record.note, [], hinted),
                      golden("correction_reply.txt"))
        gateway = LlmGateway(BackendConfig(), transport=script.as_transport())
        result = run_e2e(stroke_record.note, cfg, gateway,
                         predictor=GoldOracleSpanPredictor(dataset))
        assert result.error_flag == 1
        assert result.error_sid == 4
        assert result.correction == STROKE_CORRECTION

        # an unparseable reply falls back to the no-error triple
        garbage = MockScript(
            default_response="The patient might have an issue somewhere.")
        gateway = LlmGateway(BackendConfig(),
                             transport=garbage.as_transport())
        fallback = run_e2e(stroke_record.note, StrategyConfig(), gateway)
        assert (fallback.error_flag, fallback.error_sid,
                fallback.correction) == (0, -1, "NA")

        # blank-and-choose: picking the alternative flags the error,
        # picking the original span back confirms the note
        mcq_cfg = StrategyConfig(strategy="mcq", predictor="gold_oracle",
                                 mcq_total_options=2, mcq_injected_index=1)
        blank = blank_out_span(boy_record.note, BOY_SPAN)
        predictor = GoldOracleSpanPredictor(make_dataset([boy_record]))
        for answer, expected in (
                ('{"Answer": "A. asthma"}', (1, 8, "Suspected of asthma.")),
                ('{"Answer": "B"}', (0, -1, "NA"))):
            script = MockScript(default_response=answer)
            script.script(render_mcq_option_request(blank, BOY_SPAN, 1),
                          '{"option": "asthma"}')
            gateway = LlmGateway(BackendConfig(),
                                 transport=script.as_transport())
            picked = run_mcq(boy_record.note, mcq_cfg, gateway, predictor)
            assert (picked.error_flag, picked.error_sid,
                    picked.correction) == expected

        # identical configuration and replies reproduce identical artifacts
        pair = make_dataset([stroke_record, boy_record])
        outputs = []
        for run_dir in (tmp_path / "first", tmp_path / "second"):
            mock = MockScript(
                default_response=golden("correction_reply.txt"))
            gateway = LlmGateway(BackendConfig(),
                                 transport=mock.as_transport())
            run = run_dataset(pair, StrategyConfig(), gateway)
            save_run(str(run_dir), run)
            outputs.append((run_dir / "predictions.jsonl").read_bytes())
        assert outputs[0] == outputs[1]

    run_criterion("pipeline-contract", 5.0, body)


# ---------------------------------------------------------- evaluation protocol

def _twenty_item_eval():
    """Hand-built prediction and gold set with every tally done on paper.

    MS (12 notes): 4 agreed-clean, 2 missed errors, 1 false alarm, 2 exact
    corrections, 1 exact correction on the wrong sentence id, 2 partial
    corrections scoring 0.8. UW (8 notes): 2 agreed-clean, 2 missed errors,
    4 exact corrections.
    """
    clean_texts = ["All findings were normal.", "Patient was discharged."]
    error_texts = ["the dog", "Follow-up in two weeks."]
    records, preds = [], {}

    def clean(note_id, source, flagged=False):
        records.append(make_record(note_id, clean_texts, source=source))
        if flagged:
            preds[note_id] = CorrectionResult(note_id, 1, 0,
                                              "Something else entirely.")
        else:
            preds[note_id] = CorrectionResult(note_id, 0, -1, "NA")

    def erroneous(note_id, source, correction=None, sid=0):
        records.append(make_record(note_id, error_texts, source=source,
                                   error_sid=0, corrected="the cat"))
        if correction is None:
            preds[note_id] = CorrectionResult(note_id, 0, -1, "NA")
        else:
            preds[note_id] = CorrectionResult(note_id, 1, sid, correction)

    for i in range(4):
        clean(f"ms-{i:02d}", "MS")
    erroneous("ms-04", "MS")
    erroneous("ms-05", "MS")
    clean("ms-06", "MS", flagged=True)
    erroneous("ms-07", "MS", correction="the cat")
    erroneous("ms-08", "MS", correction="the cat")
    erroneous("ms-09", "MS", correction="the cat", sid=1)
    erroneous("ms-10", "MS", correction="the cat sat")
    erroneous("ms-11", "MS", correction="the cat sat")
    for i in range(2):
        clean(f"uw-{i:02d}", "UW")
    erroneous("uw-02", "UW")
    erroneous("uw-03", "UW")
    for i in range(4, 8):
        erroneous(f"uw-{i:02d}", "UW", correction="the cat")
    return make_dataset(records), preds


def test_acceptance_evaluation_protocol():
    def body():
        dataset, preds = _twenty_item_eval()
        report = evaluate_predictions(dataset, preds)

        ms, uw = report.per_source["MS"], report.per_source["UW"]
        assert (ms.n_items, uw.n_items, report.n_items) == (12, 8, 20)
        # flags: MS 4 clean + 5 flagged errors right, 3 wrong; UW 6 of 8
        assert ms.acc_flag == pytest.approx(9 / 12, abs=1e-12)
        assert uw.acc_flag == pytest.approx(6 / 8, abs=1e-12)
        assert report.acc_flag == pytest.approx(0.75, abs=1e-12)
        # sentence ids additionally lose the wrong-sid exact correction
        assert ms.acc_sent_id == pytest.approx(8 / 12, abs=1e-12)
        assert uw.acc_sent_id == pytest.approx(6 / 8, abs=1e-12)
        assert report.acc_sent_id == pytest.approx((8 / 12 + 6 / 8) / 2,
                                                   abs=1e-12)
        # per-item protocol: agreed-clean 1.0, disagreement 0.0, otherwise
        # rouge1 of correction vs corrected sentence (exact 1.0, partial 0.8)
        ms_rouge = (4 * 1.0 + 2 * 0.0 + 0.0 + 3 * 1.0 + 2 * 0.8) / 12
        uw_rouge = (2 * 1.0 + 2 * 0.0 + 4 * 1.0) / 8
        assert ms.rouge1 == pytest.approx(ms_rouge, abs=1e-12)
        assert uw.rouge1 == pytest.approx(uw_rouge, abs=1e-12)
        assert report.rouge1 == pytest.approx((ms_rouge + uw_rouge) / 2,
                                              abs=1e-12)
        assert report.score_agg is None

        # sidecar scores run through the same per-item protocol
        external = {record.note.note_id: {"bertscore": 0.5, "bleurt": 0.5}
                    for record in dataset.records}
        scored = evaluate_predictions(dataset, preds, external)
        ms_bert = (4 * 1.0 + 2 * 0.0 + 0.0 + 5 * 0.5) / 12
        uw_bert = (2 * 1.0 + 2 * 0.0 + 4 * 0.5) / 8
        assert scored.per_source["MS"].bertscore == \
            pytest.approx(ms_bert, abs=1e-12)
        assert scored.per_source["UW"].bertscore == \
            pytest.approx(uw_bert, abs=1e-12)
        ms_agg = (ms_rouge + 2 * ms_bert) / 3
        uw_agg = (uw_rouge + 2 * uw_bert) / 3
        assert scored.per_source["MS"].score_agg == \
            pytest.approx(ms_agg, abs=1e-12)
        assert scored.score_agg == pytest.approx((ms_agg + uw_agg) / 2,
                                                 abs=1e-12)

    run_criterion("evaluation-protocol", 1.0, body)


# --------------------------------------------------------- sensitivity harness

def test_acceptance_sensitivity_harness(stroke_record, boy_record):
    def body():
        # a role-insensitive mock must produce 7 identical metric rows
        dataset = make_dataset([stroke_record, boy_record])
        mock = MockScript(
            default_response='{"incorrect_sentence_id": "-1", '
                             '"correction": "NA"}')
        gateway = LlmGateway(BackendConfig(), transport=mock.as_transport())
        sweep = role_sweep(dataset, StrategyConfig(), gateway)
        assert len(sweep.reports) == len(PERSONAS) == 7
        rows = {json.dumps({"acc_flag": r.acc_flag,
                            "acc_sent_id": r.acc_sent_id,
                            "rouge1": r.rouge1}, sort_keys=True)
                for r in sweep.reports.values()}
        assert len(rows) == 1
        # both gold notes carry an error, the mock never flags one
        assert sweep.reports["clinician_assistant"].acc_flag == \
            pytest.approx(0.0)

        # swapping the injected slot flips every flag for an always-"A" mock
        r1 = make_record("n1", ["He has the flu today.",
                                "Treated with warfarin now."], error_sid=1,
                         corrected="Treated with aspirin now.",
                         span="warfarin")
        r2 = make_record("n2", ["Fracture of the left arm.",
                                "Cast applied to the broken hip."],
                         error_sid=1,
                         corrected="Cast applied to the broken arm.",
                         span="hip")
        swap_set = make_dataset([r1, r2])
        script = MockScript(default_response='{"Answer": "A"}')
        for record, alternative in ((r1, "aspirin"), (r2, "arm")):
            blank = blank_out_span(record.note, record.gold.error_span)
            script.script(
                render_mcq_option_request(blank, record.gold.error_span, 1),
                json.dumps({"option": alternative}))
        gateway = LlmGateway(BackendConfig(),
                             transport=script.as_transport())
        cfg = StrategyConfig(strategy="mcq", predictor="gold_oracle")
        experiment = mcq_position_experiment(
            swap_set, cfg, gateway, GoldOracleSpanPredictor(swap_set))
        # span first: answering "A" keeps the span, no error flagged
        assert all(r.error_flag == 0
                   for r in experiment.runs["A"].results)
        assert experiment.reports["A"].acc_flag == pytest.approx(0.0)
        # span second: answering "A" takes the alternative on every note
        assert all(r.error_flag == 1
                   for r in experiment.runs["B"].results)
        assert experiment.reports["B"].acc_flag == pytest.approx(1.0)
        assert experiment.reports["B"].rouge1 == pytest.approx(1.0)
        corrections = {r.note_id: r.correction
                       for r in experiment.runs["B"].results}
        assert corrections == {"n1": "Treated with aspirin now.",
                               "n2": "Cast applied to the broken arm."}

    run_criterion("sensitivity-harness", 30.0, body)
