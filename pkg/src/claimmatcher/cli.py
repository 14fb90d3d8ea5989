"""Command-line entry point.

Subcommands: build-dataset, calibrate, run, sweep, baseline, evaluate,
aggregate, report. Exit codes: 0 success, 2 config error, 3 provider
failure, 4 data validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import baseline as baseline_mod
from . import corpus, metrics, parsing, provider, runner, templates

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_DATA = 4

logger = logging.getLogger("claimmatcher")


def _load_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise provider.ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise provider.ConfigError(f"invalid JSON in {path}: {exc}") from None


def build_chat_provider(
    provider_cfg: dict,
    run_cfg: runner.RunConfig,
    dataset,
    registry: templates.TemplateRegistry,
) -> provider.ChatProvider:
    """Instantiate the chat provider for a run from its JSON config."""
    try:
        model_name = provider_cfg["model_name"]
    except KeyError:
        raise provider.ConfigError("provider config needs a model_name") from None
    params = provider.preset_params(
        provider_cfg.get("params_preset", "api_default"), model_name
    )
    context_chars = provider_cfg.get("max_context_chars")
    if run_cfg.record_or_replay == runner.REPLAY:
        return provider.ReplayChatProvider(
            run_cfg.transcript_path, params=params, context_chars=context_chars
        )
    kind = provider_cfg.get("kind")
    if kind == "openai_chat":
        return provider.OpenAIChatProvider(
            endpoint=provider_cfg["endpoint"],
            params=params,
            api_key_env=provider_cfg.get("api_key_env", "OPENAI_API_KEY"),
            context_chars=context_chars,
        )
    if kind == "gemini_chat":
        return provider.GeminiChatProvider(
            endpoint=provider_cfg["endpoint"],
            params=params,
            api_key_env=provider_cfg.get("api_key_env", "GEMINI_API_KEY"),
            context_chars=context_chars,
        )
    if kind == "echo_gold":
        template = registry.get(run_cfg.template_user)
        labels = {p.pair_id: p.label for p in dataset}
        return provider.EchoGoldChatProvider(
            labels, template.label_words, params=params, context_chars=context_chars
        )
    raise provider.ConfigError(f"unknown provider kind {kind!r}")


def build_embedder(name: str, embedder_cfg: dict | None) -> provider.Embedder:
    if embedder_cfg is None or embedder_cfg.get("kind") == "mock":
        return provider.CachingEmbedder(provider.MockEmbedder(model_name=name))
    if embedder_cfg.get("kind") == "openai_embed":
        return provider.CachingEmbedder(
            provider.OpenAIEmbedder(
                endpoint=embedder_cfg["endpoint"],
                model_name=name,
                api_key_env=embedder_cfg.get("api_key_env", "OPENAI_API_KEY"),
            )
        )
    raise provider.ConfigError(f"unknown embedder kind {embedder_cfg.get('kind')!r}")


def _apply_overrides(config: runner.RunConfig, args: argparse.Namespace) -> runner.RunConfig:
    import dataclasses

    updates: dict = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "concurrency", None) is not None:
        updates["concurrency"] = args.concurrency
    if getattr(args, "relabel_same_event", False):
        updates["relabel"] = True
    if getattr(args, "lenient", False):
        updates["lenient"] = True
    if getattr(args, "record", False):
        updates["record_or_replay"] = runner.RECORD
    if getattr(args, "replay", None):
        updates["record_or_replay"] = runner.REPLAY
        updates["transcript_path"] = args.replay
    return dataclasses.replace(config, **updates) if updates else config


def cmd_build_dataset(args: argparse.Namespace) -> int:
    claims = corpus.load_raw_claims(args.pool)
    links = corpus.load_links(args.positives)
    pairs, stats = corpus.build_dataset(
        claims, links, seed=args.seed, dedup_ratio=args.dedup_ratio, split=args.split
    )
    corpus.save_pairs(pairs, args.out)
    if args.stats_out:
        with open(args.stats_out, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(stats.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
    print(
        f"wrote {stats.n_pairs} pairs ({stats.n_positive} positive, "
        f"{stats.n_negative} negative) to {args.out}"
    )
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    validation = corpus.load_pairs(args.validation)
    embedder_cfg = _load_json(args.config) if args.config else None
    embedder = build_embedder(args.embedder, embedder_cfg)
    threshold = baseline_mod.calibrate_threshold(validation, embedder)
    baseline_mod.save_threshold(threshold, args.out)
    print(
        f"threshold {threshold.value:.4f} for {threshold.model_name} "
        f"(n={threshold.calibration_n}) written to {args.out}"
    )
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    dataset = corpus.load_pairs(args.dataset)
    threshold = baseline_mod.load_threshold(args.threshold)
    embedder_cfg = _load_json(args.config) if args.config else None
    embedder = build_embedder(threshold.model_name, embedder_cfg)
    preds = [
        baseline_mod.classify_by_similarity(pair, threshold, embedder)
        for pair in sorted(dataset, key=lambda p: p.pair_id)
    ]
    parsing.save_predictions(preds, args.out)
    report = metrics.compute_metrics(preds, dataset)
    if args.metrics_out:
        metrics.save_report(report, args.metrics_out)
    print(
        f"baseline F1 {report.f1_weighted * 100:.1f}% "
        f"accuracy {report.accuracy * 100:.1f}% on {report.n} pairs"
    )
    return EXIT_OK


def _load_run_config(args: argparse.Namespace) -> tuple[runner.RunConfig, dict]:
    run_record = _load_json(args.run_config)
    provider_cfg = run_record.pop("provider_config", None)
    if args.config:
        provider_cfg = _load_json(args.config)
    if provider_cfg is None:
        raise provider.ConfigError(
            "no provider config: pass --config or embed provider_config in the run config"
        )
    run_record.setdefault("provider", provider_cfg.get("model_name", "unknown"))
    config = runner.RunConfig.from_dict(run_record)
    return _apply_overrides(config, args), provider_cfg


def cmd_run(args: argparse.Namespace) -> int:
    config, provider_cfg = _load_run_config(args)
    dataset = corpus.load_pairs(args.dataset)
    shots = corpus.load_pairs(args.shots) if args.shots else None
    registry = templates.TemplateRegistry.load()
    chat = build_chat_provider(provider_cfg, config, dataset, registry)
    _, report = runner.run_experiment(
        config, dataset, shots, chat, registry, results_dir=args.results_dir
    )
    print(
        f"run {config.run_id}: F1 {report.f1_weighted * 100:.1f}% "
        f"accuracy {report.accuracy * 100:.1f}% fallback {report.fallback_rate * 100:.1f}% "
        f"({report.n} pairs)"
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config, provider_cfg = _load_run_config(args)
    dataset = corpus.load_pairs(args.dataset)
    shots = corpus.load_pairs(args.shots) if args.shots else None
    registry = templates.TemplateRegistry.load()
    template_ids = [t.strip() for t in args.templates.split(",") if t.strip()]
    shot_modes = [m.strip() for m in args.shot_modes.split(",") if m.strip()]

    def factory(run_cfg: runner.RunConfig) -> provider.ChatProvider:
        if run_cfg.record_or_replay == runner.REPLAY and args.replay_dir:
            run_cfg = __import__("dataclasses").replace(
                run_cfg,
                transcript_path=str(Path(args.replay_dir) / run_cfg.run_id / "transcript.jsonl"),
            )
        return build_chat_provider(provider_cfg, run_cfg, dataset, registry)

    results, table = runner.sweep(
        template_ids, shot_modes, config, dataset, shots, factory, registry,
        results_dir=args.results_dir,
    )
    print(table)
    failed = [r for r in results if r.report is None]
    return EXIT_PROVIDER if len(failed) == len(results) else EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    preds = parsing.load_predictions(args.preds)
    gold = corpus.load_pairs(args.gold)
    report = metrics.compute_metrics(preds, gold)
    if args.out:
        metrics.save_report(report, args.out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace) -> int:
    reports = [metrics.load_report(path) for path in args.reports]
    summary = metrics.aggregate(reports)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
    print(
        f"n={summary['n_runs']} F1 mean {summary['f1_weighted_mean'] * 100:.1f}% "
        f"(se {summary['f1_weighted_se'] * 100:.2f}) accuracy mean "
        f"{summary['accuracy_mean'] * 100:.1f}% (se {summary['accuracy_se'] * 100:.2f})"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    entries = []
    for run_dir in args.run_dirs:
        run_path = Path(run_dir)
        manifest = _load_json(run_path / "manifest.json")
        report = metrics.load_report(run_path / "metrics.json")
        config = runner.RunConfig.from_dict(manifest["config"])
        entries.append((config, report))
    rows = metrics.compare_runs(entries)
    table = metrics.format_ranking(rows)
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="provider config JSON")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--concurrency", type=int, default=None)
    sub.add_argument("--relabel-same-event", action="store_true")
    sub.add_argument("--lenient", action="store_true",
                     help="skip and mark transport failures instead of aborting")
    group = sub.add_mutually_exclusive_group()
    group.add_argument("--record", action="store_true", help="record a transcript")
    group.add_argument("--replay", metavar="TRANSCRIPT", help="replay from a transcript")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claimmatcher",
        description="Classify claim pairs as match/no-match with prompt-based "
        "LLM calls or an embedding-similarity baseline.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("build-dataset", help="build a balanced pair dataset")
    sub.add_argument("--positives", required=True, help="JSONL of gold positive links")
    sub.add_argument("--pool", required=True, help="JSONL of raw claims")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--dedup-ratio", type=float, default=0.80)
    sub.add_argument("--split", default="test", choices=corpus.SPLITS)
    sub.add_argument("--out", required=True)
    sub.add_argument("--stats-out")
    sub.set_defaults(func=cmd_build_dataset)

    sub = commands.add_parser("calibrate", help="calibrate the similarity threshold")
    sub.add_argument("--validation", required=True, help="JSONL of validation pairs")
    sub.add_argument("--embedder", required=True, help="embedding model name")
    sub.add_argument("--config", help="embedder config JSON (defaults to the mock)")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_calibrate)

    sub = commands.add_parser("baseline", help="classify pairs by embedding similarity")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--threshold", required=True, help="threshold JSON from calibrate")
    sub.add_argument("--config", help="embedder config JSON (defaults to the mock)")
    sub.add_argument("--out", required=True, help="predictions JSONL")
    sub.add_argument("--metrics-out")
    sub.set_defaults(func=cmd_baseline)

    sub = commands.add_parser("run", help="run one prompt experiment")
    sub.add_argument("--run-config", required=True, help="run config JSON")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--shots", help="JSONL of few-shot examples")
    sub.add_argument("--results-dir", default="results")
    _add_run_flags(sub)
    sub.set_defaults(func=cmd_run)

    sub = commands.add_parser("sweep", help="run a template/shot-mode sweep")
    sub.add_argument("--run-config", required=True, help="base run config JSON")
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--shots")
    sub.add_argument("--templates", required=True, help="comma-separated template ids")
    sub.add_argument("--shot-modes", default="zero,few")
    sub.add_argument("--results-dir", default="results")
    sub.add_argument("--replay-dir", help="root of per-run transcripts for replay")
    _add_run_flags(sub)
    sub.set_defaults(func=cmd_sweep)

    sub = commands.add_parser("evaluate", help="score predictions against gold pairs")
    sub.add_argument("--preds", required=True)
    sub.add_argument("--gold", required=True)
    sub.add_argument("--out")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("aggregate", help="mean/standard error over run reports")
    sub.add_argument("reports", nargs="+", help="metrics.json files")
    sub.add_argument("--out")
    sub.set_defaults(func=cmd_aggregate)

    sub = commands.add_parser("report", help="ranked comparison table of runs")
    sub.add_argument("run_dirs", nargs="+", help="run result directories")
    sub.add_argument("--out")
    sub.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except provider.ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (
        provider.ProviderError,
        provider.TranscriptMismatchError,
        runner.ContextOverflowError,
    ) as exc:
        logger.error("provider failure: %s", exc)
        return EXIT_PROVIDER
    except (ValueError, KeyError, FileNotFoundError) as exc:
        logger.error("data validation failure: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
