"""Shared fixtures: a synthetic memorization corpus and one trained model."""

import random
from typing import List

import pytest
import transformers

from span_service.data import QaRecord
from span_service.model import QUESTION, EncoderSettings
from span_service.train import TrainJob, train

transformers.utils.logging.disable_progress_bar()

# one line per acceptance criterion, echoed after the run summary
ACCEPTANCE_REPORT: List[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.write_line("")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)


OPENERS = [
    "Patient seen for routine follow up.",
    "He reports mild chest discomfort.",
    "She arrived for a scheduled review.",
    "Vitals were stable on arrival.",
]


def toy_records(n: int = 50, seed: int = 7) -> List[QaRecord]:
    """Synthetic notes, each with a unique drug name as the wrong span."""
    rng = random.Random(seed)
    records = []
    for i in range(n):
        drug = f"zorvex{i}"
        first = rng.choice(OPENERS)
        second = f"Treatment continued with {drug} twice daily."
        context = f"0 {first}\n1 {second}"
        records.append(QaRecord(id=f"toy-{i:03d}", question=QUESTION,
                                context=context, answer_text=drug,
                                answer_start=context.find(drug)))
    return records


def toy_settings() -> EncoderSettings:
    return EncoderSettings(max_length=64, stride=16)


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """One memorized model shared by the serving and export tests."""
    records = toy_records()
    job = TrainJob(train_records=records, eval_records=records,
                   checkpoint_dir=str(tmp_path_factory.mktemp("ckpt")),
                   epochs=25, settings=toy_settings(), stop_em=1.0)
    result = train(job)
    return result, records
