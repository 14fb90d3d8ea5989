"""Claim-pair match/no-match classification via prompt-based LLM calls,
with an embedding-similarity baseline and a replayable experiment runner."""

from .baseline import (
    Threshold,
    calibrate_threshold,
    classify_by_similarity,
    cosine_similarity,
)
from .corpus import (
    MATCH,
    NO_MATCH,
    ClaimPair,
    CorpusStats,
    RawClaim,
    VerifiedClaimSource,
    build_dataset,
    compose_verified_text,
    corpus_stats,
    dedup_near_duplicates,
    generate_negative_pairs,
    levenshtein_ratio,
    preprocess_text,
)
from .metrics import MetricsReport, aggregate, compare_runs, compute_metrics
from .parsing import Prediction, parse_response, relabel_same_event
from .provider import (
    EmbeddingVector,
    GenerationParams,
    PromptRequest,
    ProviderResponse,
    preset_params,
)
from .runner import RunConfig, long_text_pipeline, run_experiment, sweep
from .templates import (
    FewShotSet,
    InstructionMode,
    PromptTemplate,
    RenderedPrompt,
    TemplateRegistry,
    compose_instructions,
    render_few_shot,
    render_single,
)

__version__ = "0.1.0"

__all__ = [
    "MATCH",
    "NO_MATCH",
    "ClaimPair",
    "CorpusStats",
    "EmbeddingVector",
    "FewShotSet",
    "GenerationParams",
    "InstructionMode",
    "MetricsReport",
    "Prediction",
    "PromptRequest",
    "PromptTemplate",
    "ProviderResponse",
    "RawClaim",
    "RenderedPrompt",
    "RunConfig",
    "TemplateRegistry",
    "Threshold",
    "VerifiedClaimSource",
    "aggregate",
    "build_dataset",
    "calibrate_threshold",
    "classify_by_similarity",
    "compare_runs",
    "compose_instructions",
    "compose_verified_text",
    "compute_metrics",
    "corpus_stats",
    "cosine_similarity",
    "dedup_near_duplicates",
    "generate_negative_pairs",
    "levenshtein_ratio",
    "long_text_pipeline",
    "parse_response",
    "preprocess_text",
    "preset_params",
    "relabel_same_event",
    "render_few_shot",
    "render_single",
    "run_experiment",
    "sweep",
]
