"""Batch prediction into the correction pipeline's offline span format."""

import json
import logging
from typing import Sequence, Tuple

from .data import QaRecord
from .serve import SpanModel

logger = logging.getLogger(__name__)


def export_predictions(model: SpanModel, records: Sequence[QaRecord],
                       path: str) -> Tuple[int, int]:
    """Predict a span for every record and write one JSONL row per note:
    {"note_id", "text", "start", "end"}.

    Per-record failures are logged and skipped so one bad note cannot
    sink a batch; returns (written, failed).
    """
    written = failed = 0
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            try:
                text, start, end = model.predict(record.context)
            except Exception:
                logger.exception("prediction failed for note %s", record.id)
                failed += 1
                continue
            handle.write(json.dumps({"note_id": record.id, "text": text,
                                     "start": start, "end": end},
                                    ensure_ascii=False) + "\n")
            written += 1
    logger.info("exported %d predictions to %s (%d failed)",
                written, path, failed)
    return written, failed
