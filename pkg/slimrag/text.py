"""
Text normalization and answer matching shared by label collection and evaluation.

A gold answer is contained in a prediction when, after both are normalized, the
gold token sequence appears as a contiguous run of whole tokens in the
prediction. "Paris" matches "the capital is paris" but not "parisian nights".
"""

import string
import unicodedata
from typing import Iterable, List, NewType

from .exceptions import InvalidGoldError, InvalidInputError

NormalizedText = NewType("NormalizedText", str)


_ASCII_PUNCTUATION = frozenset(string.punctuation)


def _is_punctuation(ch: str) -> bool:
    # symbols count too: $100, 2+2=4, a|b
    return ch in _ASCII_PUNCTUATION or unicodedata.category(ch)[0] in "PS"


def _strip_punctuation(text: str) -> str:
    return "".join(" " if _is_punctuation(ch) else ch for ch in text)


def normalize_text(s: str) -> NormalizedText:
    """Lowercase, NFKC-normalize, replace punctuation and symbols with spaces and collapse whitespace."""
    if not s:
        return NormalizedText("")
    text = unicodedata.normalize("NFKC", s).lower()
    text = unicodedata.normalize("NFKC", text)
    text = _strip_punctuation(text)
    return NormalizedText(" ".join(text.split()))


def tokenize(s: str) -> List[str]:
    """Tokens used by the index and by ROUGE: normalized text split on spaces."""
    normalized = normalize_text(s)
    return normalized.split(" ") if normalized else []


def _contains_normalized(pred: str, gold: str) -> bool:
    return f" {gold} " in f" {pred} "


def contains_answer(pred: str, gold: str) -> bool:
    gold_norm = normalize_text(gold)
    if not gold_norm:
        raise InvalidGoldError(f"Gold answer {gold!r} is empty after normalization")
    return _contains_normalized(normalize_text(pred), gold_norm)


def unique_golds(golds: Iterable[str]) -> List[NormalizedText]:
    """Normalized golds with duplicates removed, first occurrence order kept."""
    seen = {}
    for gold in golds:
        gold_norm = normalize_text(gold)
        if not gold_norm:
            raise InvalidGoldError(f"Gold answer {gold!r} is empty after normalization")
        seen.setdefault(gold_norm, None)
    return list(seen)


def matching_ratio(pred: str, golds: List[str]) -> float:
    """Fraction of distinct gold answers contained in the prediction."""
    if not golds:
        raise InvalidInputError("matching_ratio needs at least one gold answer")
    distinct = unique_golds(golds)
    pred_norm = normalize_text(pred)
    hits = sum(1 for gold in distinct if _contains_normalized(pred_norm, gold))
    return hits / len(distinct)
