"""Checkpoint loading and the HTTP prediction endpoint."""

import json
import logging
import os
from typing import Tuple

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel
from transformers import BertForQuestionAnswering, BertTokenizerFast

from .errors import ValidationError
from .model import EncoderSettings, predict_span

logger = logging.getLogger(__name__)


class SpanModel:
    """A loaded checkpoint with a single predict method.

    The underlying model is read-only after loading, so one instance can
    serve concurrent requests.
    """

    def __init__(self, model, tokenizer, settings: EncoderSettings):
        self.model = model
        self.tokenizer = tokenizer
        self.settings = settings
        self.model.eval()

    @classmethod
    def load(cls, checkpoint_path: str) -> "SpanModel":
        settings_path = os.path.join(checkpoint_path,
                                     "encoder_settings.json")
        if not os.path.isdir(checkpoint_path) or \
                not os.path.exists(settings_path):
            raise ValidationError(
                f"{checkpoint_path} is not a saved checkpoint")
        with open(settings_path, encoding="utf-8") as handle:
            stored = json.load(handle)
        settings = EncoderSettings(**stored)
        model = BertForQuestionAnswering.from_pretrained(checkpoint_path)
        tokenizer = BertTokenizerFast.from_pretrained(checkpoint_path)
        return cls(model, tokenizer, settings)

    def predict(self, context: str) -> Tuple[str, int, int]:
        text, start, end = predict_span(self.model, self.tokenizer, context,
                                        self.settings)
        if context[start:end] != text:
            raise ValidationError(
                "decoded offsets do not reproduce the span text")
        return text, start, end


class PredictRequest(BaseModel):
    context: str


class PredictResponse(BaseModel):
    text: str
    start: int
    end: int


def create_app(model: SpanModel) -> FastAPI:
    app = FastAPI(title="span-service")

    @app.post("/predict", response_model=PredictResponse)
    def predict(request: PredictRequest) -> PredictResponse:
        if not request.context.strip():
            raise HTTPException(status_code=400, detail="empty context")
        try:
            text, start, end = model.predict(request.context)
        except Exception as exc:
            logger.exception("inference failed")
            raise HTTPException(status_code=500,
                                detail=f"inference failed: {exc}") from exc
        return PredictResponse(text=text, start=start, end=end)

    return app
