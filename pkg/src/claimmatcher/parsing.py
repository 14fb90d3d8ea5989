"""Turn raw model text into binary Match/NoMatch labels.

The first standalone occurrence of a template label word decides the class.
Answers with no clear label word, or that hedge with "partial match" before
any label word, fall back to the negative class.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import MATCH, NO_MATCH
from .templates import PromptTemplate

CLEAN = "clean"
FALLBACK_NEGATIVE = "fallback_negative"

PARTIAL_MATCH_PHRASE = "partial match"

# Phrasings that mean "same topic or event, differing only in minor
# details"; editable via run configuration.
DEFAULT_RELABEL_PATTERNS: dict[str, str] = {
    "similar-not-same-event": r"similar,?\s+but\s+not\s+the\s+same\s+(?:event|events|thing|things|incident|story)",
    "same-event-minor-difference": r"same\s+(?:topic|event|story|incident)\b.{0,160}?\b(?:differ(?:s|ing|ent|ence|ences)?|vary(?:ing)?|varies|variation)",
    "differ-in-minor-details": r"\b(?:differ|vary|differs|varies|differing|varying)\s+(?:only\s+)?in\s+(?:some\s+)?(?:minor|small|slight|non-?substantial|not\s+substantial|insubstantial)\s+details?",
}


@dataclass(frozen=True)
class Prediction:
    pair_id: str
    label: str  # Match | NoMatch
    parse_status: str  # clean | fallback_negative
    matched_token: str | None
    raw_text: str
    relabel_rule: str | None = None

    def to_dict(self) -> dict:
        record = {
            "pair_id": self.pair_id,
            "label": self.label,
            "parse_status": self.parse_status,
            "matched_token": self.matched_token,
            "raw_text": self.raw_text,
        }
        if self.relabel_rule is not None:
            record["relabel_rule"] = self.relabel_rule
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "Prediction":
        return cls(
            pair_id=record["pair_id"],
            label=record["label"],
            parse_status=record["parse_status"],
            matched_token=record.get("matched_token"),
            raw_text=record.get("raw_text", ""),
            relabel_rule=record.get("relabel_rule"),
        )


def parse_response(raw: str, template: PromptTemplate, pair_id: str = "") -> Prediction:
    """Map raw model text to a label via the template's label words.

    Total function: any input yields a prediction. Matching is
    case-insensitive on word boundaries, so punctuation around the label
    word is ignored. The earliest label word wins unless "partial match"
    appears before it.
    """
    positive_word, negative_word = template.label_words
    hits: list[tuple[int, str, str]] = []
    for word, label in ((positive_word, MATCH), (negative_word, NO_MATCH)):
        found = re.search(rf"\b{re.escape(word)}\b", raw, re.IGNORECASE)
        if found:
            hits.append((found.start(), word, label))
    hedge = raw.lower().find(PARTIAL_MATCH_PHRASE)
    if hits:
        start, word, label = min(hits)
        if hedge == -1 or hedge > start:
            return Prediction(
                pair_id=pair_id,
                label=label,
                parse_status=CLEAN,
                matched_token=word,
                raw_text=raw,
            )
    return Prediction(
        pair_id=pair_id,
        label=NO_MATCH,
        parse_status=FALLBACK_NEGATIVE,
        matched_token=None,
        raw_text=raw,
    )


def relabel_same_event(
    pred: Prediction,
    patterns: Mapping[str, str] | None = None,
) -> Prediction:
    """Flip a negative answer to Match when its explanation concedes the
    claims describe the same event with only minor differences.

    Applies only to cleanly parsed NoMatch predictions; Match predictions
    and fallback-negative answers pass through untouched, and parse_status
    never changes. The id of the matching rule is recorded.
    """
    if pred.label == MATCH or pred.parse_status != CLEAN:
        return pred
    rules = DEFAULT_RELABEL_PATTERNS if patterns is None else patterns
    for rule_id, pattern in rules.items():
        if re.search(pattern, pred.raw_text, re.IGNORECASE | re.DOTALL):
            return replace(pred, label=MATCH, relabel_rule=rule_id)
    return pred


def load_predictions(path: str | Path) -> list[Prediction]:
    preds = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                preds.append(Prediction.from_dict(json.loads(line)))
    return preds


def save_predictions(preds: Iterable[Prediction], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for pred in preds:
            handle.write(json.dumps(pred.to_dict(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")
