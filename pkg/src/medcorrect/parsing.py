"""Interpretation of model replies.

Backends frequently wrap JSON in code fences, leave trailing commas, or
pad it with prose, so extraction tries a ladder of progressively more
forgiving readings before giving up. Every giving-up path is logged and
mapped to an explicit fallback so a run never dies on one bad reply.
"""

import json
import logging
import re
from typing import Dict, List, Optional

from .prompts import OptionSet

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```(?:[A-Za-z0-9_-]+)?\s*\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",\s*([}\]])")
_LEADING_LETTER_RE = re.compile(r"^\s*([A-Za-z])(?![A-Za-z0-9])")


def _try_load(text: str) -> Optional[dict]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, dict) else None


def extract_json_object(text: str) -> Optional[dict]:
    """Pull one JSON object out of a model reply.

    Tries, in order: the reply as-is, the body of the first fenced code
    block, each of those with trailing commas stripped, and finally the
    outermost brace-delimited slice.
    """
    candidates = [text]
    fenced = _FENCE_RE.search(text)
    if fenced:
        candidates.append(fenced.group(1))
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        candidates.append(text[start:end + 1])
    for candidate in candidates:
        for variant in (candidate, _TRAILING_COMMA_RE.sub(r"\1", candidate)):
            parsed = _try_load(variant)
            if parsed is not None:
                return parsed
    return None


def parse_option_response(text: str, n_options: int) -> List[str]:
    """Read generated fill-in options from an option-request reply.

    Returns however many of the requested options could be recovered, in
    key order; an unreadable reply yields an empty list.
    """
    payload = extract_json_object(text)
    if payload is None:
        logger.warning("unparseable option reply: %.120r", text)
        return []
    lowered: Dict[str, object] = {str(k).casefold(): v for k, v in payload.items()}
    if n_options == 1:
        keys = ["option"]
    else:
        keys = [f"option_{i}" for i in range(1, n_options + 1)]
    found: List[str] = []
    for key in keys:
        value = lowered.get(key)
        if isinstance(value, str) and value.strip():
            found.append(value.strip())
    if len(found) < n_options:
        logger.warning("option reply yielded %d of %d requested options",
                       len(found), n_options)
    return found


def parse_mcq_response(text: str, option_set: OptionSet) -> Optional[str]:
    """Resolve a multiple-choice reply to the text of the chosen option.

    The answer value is matched first by leading option letter, then by
    unique option text (ignoring case). Unresolvable replies return None.
    """
    payload = extract_json_object(text)
    if payload is None:
        logger.warning("unparseable choice reply: %.120r", text)
        return None
    value = None
    for key in ("Answer", "answer"):
        if key in payload:
            value = payload[key]
            break
    if not isinstance(value, str) or not value.strip():
        logger.warning("choice reply has no usable Answer value")
        return None
    raw = value.strip()
    letter_match = _LEADING_LETTER_RE.match(raw)
    if letter_match:
        letter = letter_match.group(1).upper()
        for option_letter, option_text in option_set.options:
            if option_letter == letter:
                return option_text
    wanted = raw.casefold()
    matches = [option_text for _, option_text in option_set.options
               if option_text.casefold() == wanted]
    if len(matches) == 1:
        return matches[0]
    logger.warning("choice reply %r matches no option", raw)
    return None
