"""Claim-pair corpus construction: text preprocessing, negative sampling,
near-duplicate removal and dataset statistics.

Datasets are persisted as JSONL, one claim pair per line, UTF-8 with LF
line endings.
"""

from __future__ import annotations

import json
import random
import re
import statistics
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

MATCH = "Match"
NO_MATCH = "NoMatch"

INPUT_CLAIM = "input_claim"
VERIFIED_CLAIM = "verified_claim"

SPLITS = ("train_shots", "validation", "test")


class AllPartsEmptyError(ValueError):
    """Raised when title, subtitle and body of a verified claim are all empty."""


class InsufficientPoolError(ValueError):
    """Raised when no valid negative assignment exists for the given pool."""


class EmptyCorpusError(ValueError):
    """Raised when statistics are requested for an empty pair list."""


@dataclass(frozen=True)
class RawClaim:
    """An unprocessed claim text, either an input claim or a verified claim."""

    id: str
    text: str
    kind: str  # input_claim | verified_claim


@dataclass(frozen=True)
class VerifiedClaimSource:
    """Title, subtitle and main text of a fact-check article."""

    title: str
    subtitle: str
    body: str


@dataclass(frozen=True)
class ClaimPair:
    """One classification unit: a preprocessed input/verified claim pair."""

    pair_id: str
    input_claim: str
    verified_claim: str
    label: str  # Match | NoMatch
    source_ids: tuple[str, str]  # (input id, verified id)
    split: str  # train_shots | validation | test

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "input_claim": self.input_claim,
            "verified_claim": self.verified_claim,
            "label": self.label,
            "source_ids": list(self.source_ids),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "ClaimPair":
        return cls(
            pair_id=record["pair_id"],
            input_claim=record["input_claim"],
            verified_claim=record["verified_claim"],
            label=record["label"],
            source_ids=tuple(record["source_ids"]),
            split=record["split"],
        )


@dataclass(frozen=True)
class CorpusStats:
    n_pairs: int
    n_positive: int
    n_negative: int
    mean_chars_input: float
    mean_chars_verified: float
    mean_tokens_input: float
    mean_tokens_verified: float

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "mean_chars_input": self.mean_chars_input,
            "mean_chars_verified": self.mean_chars_verified,
            "mean_tokens_input": self.mean_tokens_input,
            "mean_tokens_verified": self.mean_tokens_verified,
        }


# Code points with the Unicode Emoji_Presentation property (Unicode 15.1).
_EMOJI_PRESENTATION_RANGES = (
    (0x231A, 0x231B), (0x23E9, 0x23EC), (0x23F0, 0x23F0), (0x23F3, 0x23F3),
    (0x25FD, 0x25FE), (0x2614, 0x2615), (0x2648, 0x2653), (0x267F, 0x267F),
    (0x2693, 0x2693), (0x26A1, 0x26A1), (0x26AA, 0x26AB), (0x26BD, 0x26BE),
    (0x26C4, 0x26C5), (0x26CE, 0x26CE), (0x26D4, 0x26D4), (0x26EA, 0x26EA),
    (0x26F2, 0x26F3), (0x26F5, 0x26F5), (0x26FA, 0x26FA), (0x26FD, 0x26FD),
    (0x2705, 0x2705), (0x270A, 0x270B), (0x2728, 0x2728), (0x274C, 0x274C),
    (0x274E, 0x274E), (0x2753, 0x2755), (0x2757, 0x2757), (0x2795, 0x2797),
    (0x27B0, 0x27B0), (0x27BF, 0x27BF), (0x2B1B, 0x2B1C), (0x2B50, 0x2B50),
    (0x2B55, 0x2B55), (0x1F004, 0x1F004), (0x1F0CF, 0x1F0CF), (0x1F18E, 0x1F18E),
    (0x1F191, 0x1F19A), (0x1F1E6, 0x1F1FF), (0x1F201, 0x1F201), (0x1F21A, 0x1F21A),
    (0x1F22F, 0x1F22F), (0x1F232, 0x1F236), (0x1F238, 0x1F23A), (0x1F250, 0x1F251),
    (0x1F300, 0x1F320), (0x1F32D, 0x1F335), (0x1F337, 0x1F37C), (0x1F37E, 0x1F393),
    (0x1F3A0, 0x1F3CA), (0x1F3CF, 0x1F3D3), (0x1F3E0, 0x1F3F0), (0x1F3F4, 0x1F3F4),
    (0x1F3F8, 0x1F43E), (0x1F440, 0x1F440), (0x1F442, 0x1F4FC), (0x1F4FF, 0x1F53D),
    (0x1F54B, 0x1F54E), (0x1F550, 0x1F567), (0x1F57A, 0x1F57A), (0x1F595, 0x1F596),
    (0x1F5A4, 0x1F5A4), (0x1F5FB, 0x1F64F), (0x1F680, 0x1F6C5), (0x1F6CC, 0x1F6CC),
    (0x1F6D0, 0x1F6D2), (0x1F6D5, 0x1F6D7), (0x1F6DC, 0x1F6DF), (0x1F6EB, 0x1F6EC),
    (0x1F6F4, 0x1F6FC), (0x1F7E0, 0x1F7EB), (0x1F7F0, 0x1F7F0), (0x1F90C, 0x1F93A),
    (0x1F93C, 0x1F945), (0x1F947, 0x1F9FF), (0x1FA70, 0x1FA7C), (0x1FA80, 0x1FA88),
    (0x1FA90, 0x1FABD), (0x1FABF, 0x1FAC5), (0x1FACE, 0x1FADB), (0x1FAE0, 0x1FAE8),
    (0x1FAF0, 0x1FAF8),
)
# Variation selectors (text/emoji style) and the zero-width joiner used in
# emoji sequences are stripped together with the emoji themselves.
_EMOJI_EXTRA_CODEPOINTS = (0xFE0E, 0xFE0F, 0x200D)


def _emoji_regex() -> re.Pattern[str]:
    parts = []
    for lo, hi in _EMOJI_PRESENTATION_RANGES:
        if lo == hi:
            parts.append(re.escape(chr(lo)))
        else:
            parts.append(f"{re.escape(chr(lo))}-{re.escape(chr(hi))}")
    parts.extend(re.escape(chr(cp)) for cp in _EMOJI_EXTRA_CODEPOINTS)
    return re.compile(f"[{''.join(parts)}]")


_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_EMOJI_RE = _emoji_regex()
_MARKER_RE = re.compile(r"[@#]+(?=\w)")
_RT_RE = re.compile(r"(?<!\S)RT(?!\S)")  # standalone token only, case-sensitive
_WS_RE = re.compile(r"\s+")


def _clean_pass(text: str) -> str:
    text = _URL_RE.sub(" ", text)
    text = _EMOJI_RE.sub("", text)
    text = _MARKER_RE.sub("", text)
    text = _RT_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()


def preprocess_text(raw: str) -> str:
    """Strip URLs, standalone "RT" markers, emoji and @/# marker characters.

    Mentions and hashtag words are kept without their marker character.
    Whitespace runs collapse to single spaces. Deletion passes repeat until
    the text is stable, which makes the function idempotent even when one
    removal exposes another pattern (e.g. a marker hiding an "RT" token).
    """
    out = raw
    while True:
        cleaned = _clean_pass(out)
        if cleaned == out:
            return out
        out = cleaned


def compose_verified_text(src: VerifiedClaimSource) -> str:
    """Join title, subtitle and body (skipping empty parts) and preprocess."""
    parts = [p.strip() for p in (src.title, src.subtitle, src.body) if p and p.strip()]
    if not parts:
        raise AllPartsEmptyError("title, subtitle and body are all empty")
    return preprocess_text(" ".join(parts))


def levenshtein_distance(a: str, b: str) -> int:
    """Character-level edit distance (insert/delete/substitute, unit cost)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def levenshtein_ratio(a: str, b: str) -> float:
    """Similarity ratio 1 - d/max(|a|,|b|); 1.0 when both strings are empty."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(a, b) / longest


def dedup_near_duplicates(pairs: Sequence[ClaimPair], max_ratio: float = 0.80) -> list[ClaimPair]:
    """Drop pairs whose input/verified similarity ratio exceeds max_ratio."""
    if not 0.0 < max_ratio < 1.0:
        raise ValueError(f"max_ratio must be in (0, 1), got {max_ratio}")
    return [
        pair
        for pair in pairs
        if levenshtein_ratio(pair.input_claim, pair.verified_claim) <= max_ratio
    ]


def corpus_stats(pairs: Sequence[ClaimPair]) -> CorpusStats:
    """Class counts plus mean character/whitespace-token lengths per side."""
    if not pairs:
        raise EmptyCorpusError("cannot compute statistics for an empty corpus")
    n_positive = sum(1 for p in pairs if p.label == MATCH)
    return CorpusStats(
        n_pairs=len(pairs),
        n_positive=n_positive,
        n_negative=len(pairs) - n_positive,
        mean_chars_input=statistics.fmean(len(p.input_claim) for p in pairs),
        mean_chars_verified=statistics.fmean(len(p.verified_claim) for p in pairs),
        mean_tokens_input=statistics.fmean(len(p.input_claim.split()) for p in pairs),
        mean_tokens_verified=statistics.fmean(len(p.verified_claim.split()) for p in pairs),
    )


def generate_negative_pairs(
    positives: Sequence[ClaimPair],
    pool: Sequence[RawClaim],
    seed: int,
) -> list[ClaimPair]:
    """Assign each positive input claim a verified claim that is not its pair.

    The candidate pool is shuffled with the given seed, then claims are
    assigned greedily with one backtracking pass that trades assignments
    when the only remaining candidates are forbidden. Every verified claim
    is used at most once. Raises InsufficientPoolError when no valid
    assignment exists.
    """
    if not positives:
        return []
    for claim in pool:
        if claim.kind != VERIFIED_CLAIM:
            raise ValueError(f"pool claim {claim.id!r} has kind {claim.kind!r}")
    pool_ids = [c.id for c in pool]
    if len(set(pool_ids)) != len(pool_ids):
        raise ValueError("pool claim ids must be unique")
    if len(pool) < len(positives):
        raise InsufficientPoolError(
            f"pool of {len(pool)} cannot cover {len(positives)} positives"
        )
    by_id = {c.id: c for c in pool}
    missing = [p.pair_id for p in positives if p.source_ids[1] not in by_id]
    if missing:
        raise ValueError(f"paired verified claims missing from pool: {missing[:5]}")

    # A claim is forbidden for an input if any positive pair links them.
    forbidden: dict[str, set[str]] = defaultdict(set)
    for p in positives:
        forbidden[p.source_ids[0]].add(p.source_ids[1])

    order = list(pool)
    random.Random(seed).shuffle(order)

    assigned: list[RawClaim] = []
    used: set[str] = set()
    for p in positives:
        banned = forbidden[p.source_ids[0]]
        choice = next((c for c in order if c.id not in used and c.id not in banned), None)
        if choice is None:
            choice = _trade_assignment(positives, assigned, order, used, banned, forbidden)
        if choice is None:
            raise InsufficientPoolError(
                f"no valid verified claim available for input {p.source_ids[0]!r}"
            )
        assigned.append(choice)
        used.add(choice.id)

    negatives = []
    for p, claim in zip(positives, assigned):
        verified_text = preprocess_text(claim.text)
        if not verified_text:
            raise ValueError(f"verified claim {claim.id!r} is empty after preprocessing")
        negatives.append(
            ClaimPair(
                pair_id=f"neg--{p.source_ids[0]}--{claim.id}",
                input_claim=p.input_claim,
                verified_claim=verified_text,
                label=NO_MATCH,
                source_ids=(p.source_ids[0], claim.id),
                split=p.split,
            )
        )
    return negatives


def _trade_assignment(
    positives: Sequence[ClaimPair],
    assigned: list[RawClaim],
    order: Sequence[RawClaim],
    used: set[str],
    banned: set[str],
    forbidden: dict[str, set[str]],
) -> RawClaim | None:
    """Free an earlier assignment whose claim is valid for the stuck input."""
    remaining = [c for c in order if c.id not in used]
    for j, earlier in enumerate(assigned):
        if earlier.id in banned:
            continue
        owner_banned = forbidden[positives[j].source_ids[0]]
        trade = next((c for c in remaining if c.id not in owner_banned), None)
        if trade is not None:
            assigned[j] = trade
            used.add(trade.id)
            return earlier
    return None


def load_raw_claims(path: str | Path) -> list[RawClaim]:
    """Read raw claims from JSONL.

    Records carry either a "text" field or "title"/"subtitle"/"body" parts,
    which are joined in that order (empty parts skipped).
    """
    claims = []
    for record in _read_jsonl(path):
        claim_id = record["id"]
        kind = record["kind"]
        if kind not in (INPUT_CLAIM, VERIFIED_CLAIM):
            raise ValueError(f"claim {claim_id!r} has unknown kind {kind!r}")
        if "text" in record:
            text = record["text"]
        else:
            parts = [
                record.get(key, "").strip()
                for key in ("title", "subtitle", "body")
                if record.get(key, "").strip()
            ]
            if not parts:
                raise AllPartsEmptyError(f"claim {claim_id!r} has no usable text parts")
            text = " ".join(parts)
        if not claim_id or not text:
            raise ValueError(f"claim record with empty id or text: {record!r}")
        claims.append(RawClaim(id=claim_id, text=text, kind=kind))
    return claims


def load_links(path: str | Path) -> list[tuple[str, str]]:
    """Read gold positive links ({"input_id","verified_id"}) from JSONL."""
    return [(r["input_id"], r["verified_id"]) for r in _read_jsonl(path)]


def load_pairs(path: str | Path) -> list[ClaimPair]:
    return [ClaimPair.from_dict(r) for r in _read_jsonl(path)]


def save_pairs(pairs: Iterable[ClaimPair], path: str | Path) -> None:
    _write_jsonl((p.to_dict() for p in pairs), path)


def build_dataset(
    claims: Sequence[RawClaim],
    links: Sequence[tuple[str, str]],
    seed: int,
    dedup_ratio: float = 0.80,
    split: str = "test",
) -> tuple[list[ClaimPair], CorpusStats]:
    """Build a balanced pair dataset from raw claims and gold positive links."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    by_id: dict[str, RawClaim] = {}
    for claim in claims:
        if claim.id in by_id:
            raise ValueError(f"duplicate claim id {claim.id!r}")
        by_id[claim.id] = claim

    positives = []
    for input_id, verified_id in links:
        try:
            inp, ver = by_id[input_id], by_id[verified_id]
        except KeyError as exc:
            raise ValueError(f"link references unknown claim id {exc}") from None
        if inp.kind != INPUT_CLAIM:
            raise ValueError(f"link input {input_id!r} is not an input claim")
        if ver.kind != VERIFIED_CLAIM:
            raise ValueError(f"link target {verified_id!r} is not a verified claim")
        input_text = preprocess_text(inp.text)
        verified_text = preprocess_text(ver.text)
        if not input_text or not verified_text:
            raise ValueError(
                f"pair {input_id}/{verified_id} is empty after preprocessing"
            )
        positives.append(
            ClaimPair(
                pair_id=f"pos--{input_id}--{verified_id}",
                input_claim=input_text,
                verified_claim=verified_text,
                label=MATCH,
                source_ids=(input_id, verified_id),
                split=split,
            )
        )

    pool = [c for c in by_id.values() if c.kind == VERIFIED_CLAIM]
    negatives = generate_negative_pairs(positives, pool, seed)
    pairs = dedup_near_duplicates(positives + negatives, dedup_ratio)
    return pairs, corpus_stats(pairs)


def _read_jsonl(path: str | Path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({exc})") from None


def _write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")
