import dataclasses
import json
import threading

import pytest

import fixture_lib as fl
from claimmatcher.corpus import MATCH
from claimmatcher.provider import (
    OK,
    PROVIDER_ERROR,
    EchoGoldChatProvider,
    GenerationParams,
    ProviderError,
    ProviderResponse,
    ReplayChatProvider,
)
from claimmatcher.runner import (
    FEW,
    RECORD,
    REPLAY,
    ZERO,
    ContextOverflowError,
    RunConfig,
    dataset_sha256,
    long_text_pipeline,
    run_experiment,
    sweep,
)
from claimmatcher.templates import ShotLeakError, TemplateRegistry


@pytest.fixture(scope="module")
def registry():
    return TemplateRegistry.load()


@pytest.fixture(scope="module")
def dataset():
    return fl.short_pairs(25, 25)


@pytest.fixture(scope="module")
def shots():
    return fl.short_shots()


class CapturingEchoProvider(EchoGoldChatProvider):
    """Echo-gold mock that also captures the prompts it was sent."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.requests = []
        self._capture_lock = threading.Lock()

    def _attempt(self, req):
        with self._capture_lock:
            self.requests.append(req)
        return super()._attempt(req)


def echo_provider(dataset, registry, template_id="PD-6", capture=False):
    cls = CapturingEchoProvider if capture else EchoGoldChatProvider
    return cls(
        {p.pair_id: p.label for p in dataset},
        registry.get(template_id).label_words,
        params=GenerationParams("mock-chat"),
    )


def config(run_id="test-run", **kwargs):
    return RunConfig(run_id=run_id, provider="mock-chat", **kwargs)


class TestRunExperiment:
    def test_echo_gold_is_perfect(self, dataset, shots, registry):
        provider = echo_provider(dataset, registry)
        preds, report = run_experiment(
            config(shot_mode=FEW), dataset, shots, provider, registry
        )
        assert report.f1_weighted == 1.0
        assert report.accuracy == 1.0
        assert report.fallback_rate == 0.0
        assert len(preds) == len(dataset)

    def test_predictions_in_pair_id_order_regardless_of_concurrency(
        self, dataset, shots, registry
    ):
        provider = echo_provider(dataset, registry)
        preds_1, _ = run_experiment(
            config(concurrency=1), dataset, None, provider, registry
        )
        preds_8, _ = run_experiment(
            config(concurrency=8), dataset, None, provider, registry
        )
        assert [p.pair_id for p in preds_1] == sorted(p.pair_id for p in dataset)
        assert preds_1 == preds_8

    def test_zero_shot_prompts_have_no_shot_block(self, dataset, registry):
        provider = echo_provider(dataset, registry, capture=True)
        run_experiment(config(shot_mode=ZERO), dataset, None, provider, registry)
        for req in provider.requests:
            assert req.user_text.count("Answer:") == 1
            assert "\n\n" not in req.user_text

    def test_few_shot_prompts_carry_ten_answered_examples(self, dataset, shots, registry):
        provider = echo_provider(dataset, registry, capture=True)
        run_experiment(config(shot_mode=FEW), dataset, shots, provider, registry)
        sample = provider.requests[0].user_text
        assert sample.count("Answer:") == 11
        assert sample.rstrip().endswith("Answer:")

    def test_ensemble_system_instruction(self, dataset, registry):
        provider = echo_provider(dataset, registry, template_id="NLI-5", capture=True)
        run_experiment(
            config(template_user="NLI-5", template_system="PD-6"),
            dataset, None, provider, registry,
        )
        for req in provider.requests:
            assert "refer to the same event" in req.system_text

    def test_single_mode_uses_default_system(self, dataset, registry):
        provider = echo_provider(dataset, registry, capture=True)
        run_experiment(config(), dataset, None, provider, registry)
        assert all(r.system_text == "You are a helpful assistant." for r in provider.requests)

    def test_shot_leak_aborts_before_any_call(self, dataset, registry):
        provider = echo_provider(dataset, registry, capture=True)
        leaked_shots = [dataset[0]]
        with pytest.raises(ShotLeakError):
            run_experiment(
                config(shot_mode=FEW), dataset, leaked_shots, provider, registry
            )
        assert provider.requests == []

    def test_context_overflow_names_pair_and_precedes_calls(self, dataset, registry):
        provider = echo_provider(dataset, registry, capture=True)
        provider.context_chars = 50
        with pytest.raises(ContextOverflowError) as exc_info:
            run_experiment(config(), dataset, None, provider, registry)
        assert exc_info.value.pair_id
        assert provider.requests == []

    def test_transport_failure_aborts_by_default(self, dataset, registry):
        provider = echo_provider(dataset, registry)
        provider._gold_labels.pop(dataset[0].pair_id)  # forces provider_error
        with pytest.raises(ProviderError):
            run_experiment(config(), dataset, None, provider, registry)

    def test_lenient_skips_and_marks(self, dataset, registry, tmp_path):
        provider = echo_provider(dataset, registry)
        dropped = dataset[0].pair_id
        provider._gold_labels.pop(dropped)
        preds, report = run_experiment(
            config(lenient=True), dataset, None, provider, registry,
            results_dir=tmp_path,
        )
        assert len(preds) == len(dataset) - 1
        assert report.n == len(dataset) - 1
        manifest = json.loads((tmp_path / "test-run" / "manifest.json").read_text())
        assert manifest["skipped"] == [{"pair_id": dropped, "status": PROVIDER_ERROR}]

    def test_dataset_must_be_test_split(self, registry):
        bad = [dataclasses.replace(fl.short_pairs(2, 2)[0], split="validation")]
        provider = echo_provider(bad, registry)
        with pytest.raises(ValueError):
            run_experiment(config(), bad, None, provider, registry)

    def test_duplicate_pair_ids_rejected(self, dataset, registry):
        provider = echo_provider(dataset, registry)
        with pytest.raises(ValueError):
            run_experiment(config(), [dataset[0], dataset[0]], None, provider, registry)

    def test_relabel_flag_applies_post_processing(self, registry):
        pairs = fl.short_pairs(2, 2)

        class HedgingProvider(EchoGoldChatProvider):
            def _attempt(self, req):
                base = super()._attempt(req)
                if base.raw_text == "no":
                    return ProviderResponse(
                        "No. These are about similar, but not the same events.",
                        0, OK,
                    )
                return base

        provider = HedgingProvider(
            {p.pair_id: p.label for p in pairs}, ("yes", "no"),
            params=GenerationParams("mock-chat"),
        )
        preds, _ = run_experiment(config(relabel=True), pairs, None, provider, registry)
        flipped = [p for p in preds if p.relabel_rule]
        assert flipped
        assert all(p.label == MATCH for p in flipped)

    def test_persisted_artifacts(self, dataset, shots, registry, tmp_path):
        provider = echo_provider(dataset, registry)
        run_experiment(
            config(shot_mode=FEW, record_or_replay=RECORD),
            dataset, shots, provider, registry, results_dir=tmp_path,
        )
        run_dir = tmp_path / "test-run"
        assert (run_dir / "predictions.jsonl").exists()
        assert (run_dir / "metrics.json").exists()
        assert (run_dir / "transcript.jsonl").exists()
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["dataset_sha256"] == dataset_sha256(dataset)
        assert manifest["template_manifest_sha256"] == registry.manifest_sha256
        assert manifest["transcript"] == "transcript.jsonl"
        assert manifest["n_pairs"] == len(dataset)

    def test_record_then_replay_identical_predictions(
        self, dataset, shots, registry, tmp_path
    ):
        provider = echo_provider(dataset, registry)
        recorded_preds, recorded_report = run_experiment(
            config("rec", shot_mode=FEW, record_or_replay=RECORD),
            dataset, shots, provider, registry, results_dir=tmp_path,
        )
        transcript = tmp_path / "rec" / "transcript.jsonl"
        replay_provider = ReplayChatProvider(
            transcript, params=GenerationParams("mock-chat")
        )
        replayed_preds, replayed_report = run_experiment(
            config("rep", shot_mode=FEW, record_or_replay=REPLAY,
                   transcript_path=str(transcript)),
            dataset, shots, replay_provider, registry,
        )
        assert replayed_preds == recorded_preds
        assert replayed_report == recorded_report

    def test_replay_with_different_seed_misses_transcript(
        self, dataset, shots, registry, tmp_path
    ):
        provider = echo_provider(dataset, registry)
        run_experiment(
            config("rec2", shot_mode=FEW, record_or_replay=RECORD),
            dataset, shots, provider, registry, results_dir=tmp_path,
        )
        transcript = tmp_path / "rec2" / "transcript.jsonl"
        replay_provider = ReplayChatProvider(
            transcript, params=GenerationParams("mock-chat")
        )
        from claimmatcher.provider import TranscriptMismatchError

        with pytest.raises(TranscriptMismatchError):
            run_experiment(
                config("rep2", shot_mode=FEW, seed=999, record_or_replay=REPLAY,
                       transcript_path=str(transcript)),
                dataset, shots, replay_provider, registry,
            )

    def test_replay_config_requires_transcript_path(self):
        with pytest.raises(ValueError):
            config(record_or_replay=REPLAY)

    def test_manifest_fully_determines_a_replayable_run(
        self, dataset, shots, registry, tmp_path
    ):
        provider = echo_provider(dataset, registry)
        run_experiment(
            config("orig", shot_mode=FEW, record_or_replay=RECORD),
            dataset, shots, provider, registry, results_dir=tmp_path,
        )
        run_dir = tmp_path / "orig"
        manifest = json.loads((run_dir / "manifest.json").read_text())
        # rebuild the run purely from the persisted manifest
        replay_config = dataclasses.replace(
            RunConfig.from_dict(manifest["config"]),
            record_or_replay=REPLAY,
            transcript_path=str(run_dir / manifest["transcript"]),
        )
        assert dataset_sha256(dataset) == manifest["dataset_sha256"]
        assert registry.manifest_sha256 == manifest["template_manifest_sha256"]
        replay_provider = ReplayChatProvider(
            replay_config.transcript_path,
            params=GenerationParams(manifest["model_name"]),
        )
        replayed_dir = tmp_path / "replayed"
        run_experiment(
            dataclasses.replace(replay_config, run_id="replayed"),
            dataset, shots, replay_provider, registry, results_dir=replayed_dir,
        )
        original = (run_dir / "predictions.jsonl").read_bytes()
        replayed = (replayed_dir / "replayed" / "predictions.jsonl").read_bytes()
        assert original == replayed
        assert (run_dir / "metrics.json").read_bytes() == (
            replayed_dir / "replayed" / "metrics.json"
        ).read_bytes()


class TestSweep:
    def test_thirteen_templates_one_mode(self, dataset, shots, registry):
        def factory(cfg):
            return echo_provider(dataset, registry, template_id=cfg.template_user)

        results, table = sweep(
            registry.ids(), [FEW], config("sweep"), dataset, shots, factory, registry
        )
        assert len(results) == 13
        assert all(r.report is not None for r in results)
        assert table.count("\n") >= 13

    def test_ensemble_grid_shape(self, dataset, shots, registry):
        def factory(cfg):
            return echo_provider(dataset, registry, template_id=cfg.template_user)

        results, _ = sweep(
            ["CM-1", "PD-6", "NLI-5"], [ZERO, FEW],
            config("ens", template_system="PD-6"),
            dataset, shots, factory, registry,
        )
        assert len(results) == 6
        assert all(r.report is not None for r in results)
        assert all(r.config.template_system == "PD-6" for r in results)

    def test_failed_run_marked_and_isolated(self, dataset, shots, registry):
        def factory(cfg):
            if cfg.template_user == "PD-3":
                raise FileNotFoundError("missing transcript for PD-3")
            return echo_provider(dataset, registry, template_id=cfg.template_user)

        results, table = sweep(
            registry.ids(), [FEW], config("part"), dataset, shots, factory, registry
        )
        failed = [r for r in results if r.report is None]
        assert len(failed) == 1
        assert failed[0].config.template_user == "PD-3"
        assert len([r for r in results if r.report is not None]) == 12
        assert "FAILED" in table


class TestLongTextPipeline:
    def test_domain_independent_uses_short_shots(self, registry):
        lt_dataset = fl.lt_pairs(5, 5)
        provider = echo_provider(lt_dataset, registry, capture=True)
        report = long_text_pipeline(
            lt_dataset, "domain_independent", config("lt", shot_mode=FEW),
            short_shots=fl.short_shots(), lt_shots=fl.lt_shots(),
            provider=provider, registry=registry,
        )
        assert report.f1_weighted == 1.0
        sample = provider.requests[0].user_text
        assert "district 9000" in sample  # short-text shot content
        assert "region 9100" not in sample

    def test_in_domain_uses_lt_shots(self, registry):
        lt_dataset = fl.lt_pairs(5, 5)
        provider = echo_provider(lt_dataset, registry, capture=True)
        report = long_text_pipeline(
            lt_dataset, "in_domain", config("lt2", shot_mode=FEW),
            short_shots=fl.short_shots(), lt_shots=fl.lt_shots(),
            provider=provider, registry=registry,
        )
        assert report.accuracy == 1.0
        sample = provider.requests[0].user_text
        assert "region 9100" in sample
        assert "district 9000" not in sample

    def test_articles_processed_whole(self, registry):
        lt_dataset = fl.lt_pairs(3, 3)
        provider = echo_provider(lt_dataset, registry, capture=True)
        long_text_pipeline(
            lt_dataset, "domain_independent", config("lt3", shot_mode=ZERO),
            short_shots=fl.short_shots(), lt_shots=fl.lt_shots(),
            provider=provider, registry=registry,
        )
        by_id = {req.request_id: req for req in provider.requests}
        for pair in lt_dataset:
            assert pair.verified_claim in by_id[pair.pair_id].user_text

    def test_unknown_shots_source(self, registry):
        lt_dataset = fl.lt_pairs(2, 2)
        provider = echo_provider(lt_dataset, registry)
        with pytest.raises(ValueError):
            long_text_pipeline(
                lt_dataset, "bogus", config("lt4"),
                short_shots=[], lt_shots=[], provider=provider, registry=registry,
            )

    def test_context_overflow_on_long_article(self, registry):
        lt_dataset = fl.lt_pairs(3, 3)
        provider = echo_provider(lt_dataset, registry)
        provider.context_chars = 500  # articles are ~2.5k chars
        with pytest.raises(ContextOverflowError) as exc_info:
            long_text_pipeline(
                lt_dataset, "domain_independent", config("lt5", shot_mode=ZERO),
                short_shots=fl.short_shots(), lt_shots=fl.lt_shots(),
                provider=provider, registry=registry,
            )
        assert exc_info.value.pair_id.startswith("lt-")
