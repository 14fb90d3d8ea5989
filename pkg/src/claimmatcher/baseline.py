"""Semantic-similarity baseline: cosine of claim embeddings against a
threshold calibrated as the median score of positive validation pairs."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import MATCH, NO_MATCH, ClaimPair
from .parsing import CLEAN, Prediction
from .provider import Embedder, EmbeddingVector


class DimMismatchError(ValueError):
    """Vectors of different dimension cannot be compared."""


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for an all-zero vector."""


class EmptyValidationError(ValueError):
    """Calibration requires at least one positive validation pair."""


class ModelMismatchError(ValueError):
    """The embedder differs from the one the threshold was calibrated with."""


@dataclass(frozen=True)
class Threshold:
    value: float
    model_name: str
    calibration_n: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "model_name": self.model_name,
            "calibration_n": self.calibration_n,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "Threshold":
        return cls(
            value=record["value"],
            model_name=record["model_name"],
            calibration_n=record["calibration_n"],
        )


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
    norm_a = math.sqrt(sum(x * x for x in a.values))
    norm_b = math.sqrt(sum(x * x for x in b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    dot = sum(x * y for x, y in zip(a.values, b.values))
    return dot / (norm_a * norm_b)


def pair_similarity(pair: ClaimPair, embedder: Embedder) -> float:
    return cosine_similarity(
        embedder.embed(pair.input_claim),
        embedder.embed(pair.verified_claim),
    )


def calibrate_threshold(
    validation_positives: Sequence[ClaimPair],
    embedder: Embedder,
) -> Threshold:
    """Median similarity over positive validation pairs (mean of the two
    middle values for even counts). Non-positive pairs are ignored."""
    scores = [
        pair_similarity(pair, embedder)
        for pair in validation_positives
        if pair.label == MATCH
    ]
    if not scores:
        raise EmptyValidationError("no positive pairs to calibrate on")
    return Threshold(
        value=statistics.median(scores),
        model_name=embedder.model_name,
        calibration_n=len(scores),
    )


def classify_by_similarity(
    pair: ClaimPair,
    threshold: Threshold,
    embedder: Embedder,
) -> Prediction:
    """Label Match iff similarity >= threshold (ties count as Match)."""
    if embedder.model_name != threshold.model_name:
        raise ModelMismatchError(
            f"threshold calibrated with {threshold.model_name!r}, "
            f"embedder is {embedder.model_name!r}"
        )
    score = pair_similarity(pair, embedder)
    return Prediction(
        pair_id=pair.pair_id,
        label=MATCH if score >= threshold.value else NO_MATCH,
        parse_status=CLEAN,
        matched_token=None,
        raw_text=f"{score:.6f}",
    )


def load_threshold(path: str | Path) -> Threshold:
    with open(path, encoding="utf-8") as handle:
        return Threshold.from_dict(json.load(handle))


def save_threshold(threshold: Threshold, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(threshold.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
