"""Experiment orchestration: render, complete, parse and score claim pairs,
with run manifests, record/replay transcripts and template/mode sweeps.

Prediction order is a pure function of the dataset (sorted by pair id), so
runs are reproducible regardless of completion timing or concurrency.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .corpus import ClaimPair
from .metrics import MetricsReport, compare_runs, compute_metrics, format_ranking
from .parsing import Prediction, parse_response, relabel_same_event, save_predictions
from .provider import (
    OK,
    ChatProvider,
    PromptRequest,
    ProviderError,
    ProviderResponse,
    transcript_entry,
    write_transcript,
)
from .templates import (
    ENSEMBLE,
    SINGLE,
    TRAILING,
    FewShotSet,
    InstructionMode,
    ShotLeakError,
    TemplateRegistry,
    compose_instructions,
    render_few_shot,
    render_single,
)

logger = logging.getLogger(__name__)

ZERO = "zero"
FEW = "few"

LIVE = "live"
RECORD = "record"
REPLAY = "replay"

DOMAIN_INDEPENDENT = "domain_independent"
IN_DOMAIN = "in_domain"


class ContextOverflowError(RuntimeError):
    """A rendered prompt exceeds the provider's declared context length."""

    def __init__(self, pair_id: str, length: int, limit: int):
        super().__init__(
            f"prompt for pair {pair_id!r} is {length} chars, over the "
            f"provider context limit of {limit}"
        )
        self.pair_id = pair_id


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    provider: str = "mock"
    template_user: str = "PD-6"
    template_system: str | None = None
    question_position: str = TRAILING
    shot_mode: str = ZERO  # zero | few
    shots_source: str = DOMAIN_INDEPENDENT  # domain_independent | in_domain
    seed: int = 0
    concurrency: int = 4
    record_or_replay: str = LIVE  # live | record | replay
    transcript_path: str | None = None  # required for replay
    relabel: bool = False
    lenient: bool = False

    def __post_init__(self) -> None:
        if self.shot_mode not in (ZERO, FEW):
            raise ValueError(f"unknown shot mode {self.shot_mode!r}")
        if self.record_or_replay not in (LIVE, RECORD, REPLAY):
            raise ValueError(f"unknown record/replay mode {self.record_or_replay!r}")
        if self.record_or_replay == REPLAY and not self.transcript_path:
            raise ValueError("replay mode requires a transcript path")

    @property
    def instruction_mode(self) -> InstructionMode:
        return InstructionMode(
            mode=ENSEMBLE if self.template_system else SINGLE,
            user_template=self.template_user,
            system_template=self.template_system,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, record: dict) -> "RunConfig":
        known = {key: record[key] for key in cls.__dataclass_fields__ if key in record}
        return cls(**known)


@dataclass
class SweepResult:
    config: RunConfig
    report: MetricsReport | None
    error: str | None = None


def _validate_test_dataset(dataset: Sequence[ClaimPair]) -> None:
    ids = [p.pair_id for p in dataset]
    if not ids:
        raise ValueError("dataset is empty")
    if len(set(ids)) != len(ids):
        raise ValueError("dataset contains duplicate pair ids")
    wrong_split = [p.pair_id for p in dataset if p.split != "test"]
    if wrong_split:
        raise ValueError(f"dataset pairs outside the test split: {wrong_split[:5]}")


def _build_requests(
    config: RunConfig,
    dataset: Sequence[ClaimPair],
    shots: Sequence[ClaimPair] | None,
    provider: ChatProvider,
    registry: TemplateRegistry,
) -> list[tuple[ClaimPair, PromptRequest]]:
    template = registry.get(config.template_user, config.question_position)
    shot_set = None
    if config.shot_mode == FEW:
        if not shots:
            raise ValueError("few-shot run requires shot examples")
        test_ids = {p.pair_id for p in dataset}
        leaked = sorted(
            s.pair_id for s in shots if s.pair_id in test_ids or s.split == "test"
        )
        if leaked:
            raise ShotLeakError(f"shot pairs overlap the test split: {leaked[:5]}")
        shot_set = FewShotSet.build(shots, config.seed)

    mode = config.instruction_mode
    requests = []
    for pair in sorted(dataset, key=lambda p: p.pair_id):
        if shot_set is not None:
            user_text = render_few_shot(template, shot_set, pair)
        else:
            user_text = render_single(template, pair)
        prompt = compose_instructions(mode, user_text, registry)
        length = len(prompt.system_text) + len(prompt.user_text)
        if provider.context_chars is not None and length > provider.context_chars:
            raise ContextOverflowError(pair.pair_id, length, provider.context_chars)
        requests.append(
            (
                pair,
                PromptRequest(
                    request_id=pair.pair_id,
                    system_text=prompt.system_text,
                    user_text=prompt.user_text,
                    params=provider.params,
                ),
            )
        )
    return requests


def run_experiment(
    config: RunConfig,
    dataset: Sequence[ClaimPair],
    shots: Sequence[ClaimPair] | None,
    provider: ChatProvider,
    registry: TemplateRegistry,
    results_dir: str | Path | None = None,
) -> tuple[list[Prediction], MetricsReport]:
    """Run one experiment over the test dataset and score it.

    Shot/test disjointness and context limits are checked before any
    provider call. Transport failures abort the run unless config.lenient
    is set, in which case the affected pairs are skipped and recorded in
    the manifest.
    """
    _validate_test_dataset(dataset)
    requests = _build_requests(config, dataset, shots, provider, registry)
    template = registry.get(config.template_user, config.question_position)

    with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as pool:
        responses: list[ProviderResponse] = list(
            pool.map(lambda item: provider.complete(item[1]), requests)
        )

    predictions: list[Prediction] = []
    skipped: list[dict] = []
    transcript: list[dict] = []
    for (pair, request), response in zip(requests, responses):
        transcript.append(transcript_entry(request, response))
        if response.status != OK:
            if config.lenient:
                logger.warning("skipping pair %s (%s)", pair.pair_id, response.status)
                skipped.append({"pair_id": pair.pair_id, "status": response.status})
                continue
            raise ProviderError(
                f"provider returned {response.status!r} for pair {pair.pair_id!r}"
            )
        prediction = parse_response(response.raw_text, template, pair_id=pair.pair_id)
        if config.relabel:
            prediction = relabel_same_event(prediction)
        predictions.append(prediction)

    if skipped:
        kept = {p.pair_id for p in predictions}
        gold = [p for p in dataset if p.pair_id in kept]
    else:
        gold = list(dataset)
    report = compute_metrics(predictions, gold)

    if results_dir is not None:
        _persist_run(
            Path(results_dir), config, dataset, predictions, report,
            transcript, skipped, provider, registry,
        )
    return predictions, report


def dataset_sha256(dataset: Sequence[ClaimPair]) -> str:
    canonical = "\n".join(
        json.dumps(p.to_dict(), sort_keys=True, ensure_ascii=False)
        for p in sorted(dataset, key=lambda p: p.pair_id)
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _persist_run(
    results_dir: Path,
    config: RunConfig,
    dataset: Sequence[ClaimPair],
    predictions: Sequence[Prediction],
    report: MetricsReport,
    transcript: Sequence[dict],
    skipped: Sequence[dict],
    provider: ChatProvider,
    registry: TemplateRegistry,
) -> Path:
    run_dir = results_dir / config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    save_predictions(predictions, run_dir / "predictions.jsonl")
    with open(run_dir / "metrics.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(report.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    transcript_ref = config.transcript_path
    if config.record_or_replay == RECORD:
        write_transcript(transcript, run_dir / "transcript.jsonl")
        transcript_ref = "transcript.jsonl"
    manifest = {
        "run_id": config.run_id,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": config.to_dict(),
        "provider": provider.name,
        "model_name": provider.params.model_name,
        "dataset_sha256": dataset_sha256(dataset),
        "template_manifest_sha256": registry.manifest_sha256,
        "transcript": transcript_ref,
        "n_pairs": len(dataset),
        "n_predictions": len(predictions),
        "skipped": list(skipped),
        "fallback_rate": report.fallback_rate,
    }
    with open(run_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return run_dir


def sweep(
    user_templates: Sequence[str],
    shot_modes: Sequence[str],
    base_config: RunConfig,
    dataset: Sequence[ClaimPair],
    shots: Sequence[ClaimPair] | None,
    provider_factory: Callable[[RunConfig], ChatProvider],
    registry: TemplateRegistry,
    results_dir: str | Path | None = None,
) -> tuple[list[SweepResult], str]:
    """One run per template/shot-mode combination; failures are isolated.

    Returns the per-run results plus a ranked comparison table with failed
    runs marked.
    """
    results: list[SweepResult] = []
    for template_id in user_templates:
        for shot_mode in shot_modes:
            config = dataclasses.replace(
                base_config,
                run_id=f"{base_config.run_id}--{template_id}--{shot_mode}",
                template_user=template_id,
                shot_mode=shot_mode,
            )
            try:
                provider = provider_factory(config)
                _, report = run_experiment(
                    config, dataset, shots, provider, registry, results_dir
                )
                results.append(SweepResult(config=config, report=report))
            except Exception as exc:  # noqa: BLE001 - sweep isolates run failures
                logger.warning("run %s failed: %s", config.run_id, exc)
                results.append(SweepResult(config=config, report=None, error=str(exc)))
    succeeded = [(r.config, r.report) for r in results if r.report is not None]
    failures = [
        {
            "model": r.config.provider,
            "template": r.config.template_user,
            "mode": f"{r.config.shot_mode}-shot",
        }
        for r in results
        if r.report is None
    ]
    rows = compare_runs(succeeded) if succeeded else []
    table = format_ranking(rows, failures)
    return results, table


def long_text_pipeline(
    lt_dataset: Sequence[ClaimPair],
    shots_source: str,
    config: RunConfig,
    *,
    short_shots: Sequence[ClaimPair],
    lt_shots: Sequence[ClaimPair],
    provider: ChatProvider,
    registry: TemplateRegistry,
    results_dir: str | Path | None = None,
) -> MetricsReport:
    """Domain-transfer run over long texts, processed whole (no chunking).

    shots_source picks between the short-text shot set (domain independent)
    and shots drawn from the long-text domain itself.
    """
    if shots_source == DOMAIN_INDEPENDENT:
        shots = short_shots
    elif shots_source == IN_DOMAIN:
        shots = lt_shots
    else:
        raise ValueError(f"unknown shots source {shots_source!r}")
    run_config = dataclasses.replace(config, shots_source=shots_source)
    _, report = run_experiment(
        run_config, lt_dataset, shots, provider, registry, results_dir
    )
    return report
