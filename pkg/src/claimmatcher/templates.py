"""Prompt templates for claim matching, paraphrase detection and NLI phrasings.

The 13 patterns live in a versioned manifest (data/templates.json). Claims
are rendered into the {A}/{B} slots with "Statement 1:"/"Statement 2:"
prefixes; each template also carries a leading-question variant and an
imperative task statement used for system instructions.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .corpus import MATCH, ClaimPair

STATEMENT_1_PREFIX = "Statement 1: "
STATEMENT_2_PREFIX = "Statement 2: "

DEFAULT_SYSTEM_TEXT = "You are a helpful assistant."

TRAILING = "trailing"
LEADING = "leading"

SINGLE = "single"
ENSEMBLE = "ensemble"

_SLOT_RE = re.compile(r"\{A\}|\{B\}")


class UnknownTemplateError(KeyError):
    """Raised when a template id is not in the registry."""


class ShotLeakError(ValueError):
    """Raised when a few-shot example overlaps with the test data."""


class MissingSystemTemplateError(ValueError):
    """Raised when an ensemble instruction lacks a system template."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    family: str  # CM | PD | NLI
    pattern: str  # contains {A} and {B} exactly once each
    label_words: tuple[str, str]  # (positive, negative)
    question_position: str  # trailing | leading
    task_statement: str


@dataclass(frozen=True)
class FewShotSet:
    """Labeled priming examples in a seed-determined order."""

    examples: tuple[ClaimPair, ...]
    order_seed: int

    @property
    def n_positive(self) -> int:
        return sum(1 for p in self.examples if p.label == MATCH)

    @property
    def n_negative(self) -> int:
        return len(self.examples) - self.n_positive

    @classmethod
    def build(cls, pairs: Iterable[ClaimPair], order_seed: int) -> "FewShotSet":
        """Mix positive and negative examples with a seeded shuffle.

        Pairs are sorted by id before shuffling so the order depends only
        on the example contents and the seed, not on input order.
        """
        ordered = sorted(pairs, key=lambda p: p.pair_id)
        random.Random(order_seed).shuffle(ordered)
        return cls(examples=tuple(ordered), order_seed=order_seed)


@dataclass(frozen=True)
class InstructionMode:
    mode: str  # single | ensemble
    user_template: str
    system_template: str | None = None


@dataclass(frozen=True)
class RenderedPrompt:
    system_text: str
    user_text: str
    expected_labels: tuple[str, str]


class TemplateRegistry:
    """Immutable registry of the prompt templates from the manifest."""

    def __init__(self, manifest_text: str):
        manifest = json.loads(manifest_text)
        self.version: int = manifest["version"]
        self.manifest_sha256: str = hashlib.sha256(manifest_text.encode("utf-8")).hexdigest()
        self._entries: dict[str, dict] = {}
        for entry in manifest["templates"]:
            self._validate(entry)
            self._entries[entry["id"]] = entry

    @staticmethod
    def _validate(entry: dict) -> None:
        words = tuple(entry["label_words"])
        if words not in (("yes", "no"), ("true", "false")):
            raise ValueError(f"template {entry['id']}: bad label words {words}")
        for key in ("pattern", "leading_pattern"):
            pattern = entry[key]
            if pattern.count("{A}") != 1 or pattern.count("{B}") != 1:
                raise ValueError(f"template {entry['id']}: {key} must use each slot once")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "TemplateRegistry":
        if path is not None:
            text = Path(path).read_text(encoding="utf-8")
        else:
            text = resources.files("claimmatcher.data").joinpath("templates.json").read_text(
                encoding="utf-8"
            )
        return cls(text)

    def ids(self) -> list[str]:
        return list(self._entries)

    def families(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self._entries.values():
            counts[entry["family"]] = counts.get(entry["family"], 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._entries

    def get(self, template_id: str, question_position: str = TRAILING) -> PromptTemplate:
        try:
            entry = self._entries[template_id]
        except KeyError:
            raise UnknownTemplateError(template_id) from None
        if question_position not in (TRAILING, LEADING):
            raise ValueError(f"unknown question position {question_position!r}")
        pattern = entry["pattern"] if question_position == TRAILING else entry["leading_pattern"]
        return PromptTemplate(
            template_id=entry["id"],
            family=entry["family"],
            pattern=pattern,
            label_words=tuple(entry["label_words"]),
            question_position=question_position,
            task_statement=entry["task_statement"],
        )


def render_single(template: PromptTemplate, pair: ClaimPair) -> str:
    """Fill the {A}/{B} slots with the prefixed claim texts.

    Substitution happens in a single pass so claim texts containing literal
    slot markers are never re-expanded.
    """
    a = STATEMENT_1_PREFIX + pair.input_claim
    b = STATEMENT_2_PREFIX + pair.verified_claim
    return _SLOT_RE.sub(lambda m: a if m.group() == "{A}" else b, template.pattern)


def render_few_shot(
    template: PromptTemplate,
    shots: FewShotSet,
    pair: ClaimPair,
) -> str:
    """Render priming examples followed by the unanswered test prompt.

    Each shot is the fully rendered template plus its gold label word; the
    test item is appended last with the answer slot left empty.
    """
    positive_word, negative_word = template.label_words
    blocks = []
    for shot in shots.examples:
        if shot.split == "test" or shot.pair_id == pair.pair_id:
            raise ShotLeakError(f"shot {shot.pair_id!r} overlaps with the test data")
        word = positive_word if shot.label == MATCH else negative_word
        blocks.append(f"{render_single(template, shot)} {word}")
    blocks.append(render_single(template, pair))
    return "\n\n".join(blocks)


def compose_instructions(
    mode: InstructionMode,
    rendered_user: str,
    registry: TemplateRegistry,
) -> RenderedPrompt:
    """Pair the rendered user text with the system instruction for the mode.

    Single mode uses the fixed default system text. Ensemble mode renders
    the system template as its task statement, without claim slots filled.
    """
    user = registry.get(mode.user_template)
    if mode.mode == SINGLE:
        system_text = DEFAULT_SYSTEM_TEXT
    elif mode.mode == ENSEMBLE:
        if not mode.system_template:
            raise MissingSystemTemplateError("ensemble mode requires a system template")
        system_text = registry.get(mode.system_template).task_statement
    else:
        raise ValueError(f"unknown instruction mode {mode.mode!r}")
    return RenderedPrompt(
        system_text=system_text,
        user_text=rendered_user,
        expected_labels=user.label_words,
    )
