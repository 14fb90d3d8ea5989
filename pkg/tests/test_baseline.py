import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from claimmatcher.baseline import (
    DimMismatchError,
    EmptyValidationError,
    ModelMismatchError,
    Threshold,
    ZeroVectorError,
    calibrate_threshold,
    classify_by_similarity,
    cosine_similarity,
)
from claimmatcher.corpus import MATCH, NO_MATCH, ClaimPair
from claimmatcher.parsing import CLEAN
from claimmatcher.provider import Embedder, EmbeddingVector, SeparableEmbedder


def vec(*values, model="m"):
    return EmbeddingVector(values=tuple(float(v) for v in values), model_name=model)


def pair(pair_id, a, b, label=MATCH, split="validation"):
    return ClaimPair(pair_id, a, b, label, (f"i-{pair_id}", f"v-{pair_id}"), split)


class PlantedScoreEmbedder(Embedder):
    """Returns 2D vectors so that each pair's cosine equals a planted score."""

    model_name = "planted"

    def __init__(self):
        self._vectors: dict[str, tuple[float, float]] = {}

    def plant(self, text_a: str, text_b: str, score: float) -> None:
        self._vectors[text_a] = (1.0, 0.0)
        self._vectors[text_b] = (score, (1 - score**2) ** 0.5)

    def _embed(self, text):
        return EmbeddingVector(values=self._vectors[text], model_name=self.model_name)


def planted_validation(scores, label=MATCH):
    embedder = PlantedScoreEmbedder()
    pairs = []
    for i, score in enumerate(scores):
        a, b = f"input {i}", f"verified {i}"
        embedder.plant(a, b, score)
        pairs.append(pair(f"p{i}", a, b, label=label))
    return pairs, embedder


class TestCosineSimilarity:
    def test_self_similarity(self):
        v = vec(0.3, -0.2, 0.9)
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(vec(1, 0), vec(0, 1)) == pytest.approx(0.0)

    def test_hand_computed(self):
        # dot = 1, norms 1 and sqrt(2)
        assert cosine_similarity(vec(1, 0), vec(1, 1)) == pytest.approx(0.70711, abs=1e-5)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatchError):
            cosine_similarity(vec(1, 0), vec(1, 0, 0))

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine_similarity(vec(0, 0), vec(1, 0))

    def test_bounded(self):
        rng = random.Random(0)
        for _ in range(50):
            a = vec(*(rng.uniform(-1, 1) for _ in range(8)))
            b = vec(*(rng.uniform(-1, 1) for _ in range(8)))
            assert -1.0 - 1e-12 <= cosine_similarity(a, b) <= 1.0 + 1e-12


class TestCalibrateThreshold:
    def test_odd_n_median(self):
        pairs, embedder = planted_validation([0.2, 0.6, 0.9])
        threshold = calibrate_threshold(pairs, embedder)
        assert threshold.value == pytest.approx(0.6)
        assert threshold.calibration_n == 3
        assert threshold.model_name == "planted"

    def test_even_n_mean_of_middles(self):
        pairs, embedder = planted_validation([0.4, 0.8])
        assert calibrate_threshold(pairs, embedder).value == pytest.approx(0.6)

    def test_matches_sort_based_oracle(self):
        rng = random.Random(99)
        for trial in range(100):
            n = rng.randrange(1, 25)
            scores = [round(rng.uniform(-0.95, 0.95), 6) for _ in range(n)]
            pairs, embedder = planted_validation(scores)
            threshold = calibrate_threshold(pairs, embedder)
            ordered = sorted(scores)
            if n % 2 == 1:
                expected = ordered[n // 2]
            else:
                expected = (ordered[n // 2 - 1] + ordered[n // 2]) / 2
            assert threshold.value == pytest.approx(expected, abs=1e-9), trial

    def test_non_positive_pairs_ignored(self):
        pairs, embedder = planted_validation([0.2, 0.6, 0.9])
        embedder.plant("neg input", "neg verified", 0.99)
        negative = pair("neg0", "neg input", "neg verified", label=NO_MATCH)
        threshold = calibrate_threshold(pairs + [negative], embedder)
        assert threshold.value == pytest.approx(0.6)
        assert threshold.calibration_n == 3

    def test_permutation_invariant(self):
        scores = [0.1, 0.5, 0.3, 0.8, -0.2, 0.44]
        pairs, embedder = planted_validation(scores)
        forward = calibrate_threshold(pairs, embedder)
        backward = calibrate_threshold(list(reversed(pairs)), embedder)
        assert forward.value == backward.value

    def test_empty_validation(self):
        pairs, embedder = planted_validation([0.9], label=NO_MATCH)
        with pytest.raises(EmptyValidationError):
            calibrate_threshold(pairs, embedder)


class TestClassifyBySimilarity:
    def test_score_at_threshold_is_match(self):
        pairs, embedder = planted_validation([0.6])
        threshold = Threshold(0.6, "planted", 1)
        pred = classify_by_similarity(pairs[0], threshold, embedder)
        assert pred.label == MATCH
        assert pred.parse_status == CLEAN
        assert pred.matched_token is None

    def test_score_below_threshold_is_no_match(self):
        pairs, embedder = planted_validation([0.6 - 1e-6])
        threshold = Threshold(0.6, "planted", 1)
        assert classify_by_similarity(pairs[0], threshold, embedder).label == NO_MATCH

    def test_model_mismatch(self):
        pairs, embedder = planted_validation([0.5])
        threshold = Threshold(0.5, "another-model", 1)
        with pytest.raises(ModelMismatchError):
            classify_by_similarity(pairs[0], threshold, embedder)

    def test_separable_fixture_classifies_perfectly(self):
        texts = {}
        pairs = []
        for i in range(10):
            a, b = f"claim {i} phrasing one", f"claim {i} phrasing two"
            texts[a] = f"topic-{i}"
            texts[b] = f"topic-{i}"
            pairs.append(pair(f"pos{i}", a, b, MATCH, split="test"))
        for i in range(10):
            a = f"claim {i} phrasing one"
            b = f"claim {(i + 3) % 10} phrasing two"
            pairs.append(pair(f"neg{i}", a, b, NO_MATCH, split="test"))
        embedder = SeparableEmbedder(texts)
        threshold = Threshold(0.6, embedder.model_name, 10)
        for p in pairs:
            pred = classify_by_similarity(p, threshold, embedder)
            assert pred.label == p.label, p.pair_id

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(min_value=-0.99, max_value=0.99),
        st.floats(min_value=-0.99, max_value=0.99),
        st.floats(min_value=-0.99, max_value=0.99),
    )
    def test_monotone_in_threshold(self, score, low, high):
        lo, hi = sorted((low, high))
        pairs, embedder = planted_validation([score])
        pred_low = classify_by_similarity(pairs[0], Threshold(lo, "planted", 1), embedder)
        pred_high = classify_by_similarity(pairs[0], Threshold(hi, "planted", 1), embedder)
        # raising the threshold never turns NoMatch into Match
        if pred_low.label == NO_MATCH:
            assert pred_high.label == NO_MATCH

    def test_median_property_at_least_half_positive(self):
        rng = random.Random(17)
        for _ in range(20):
            scores = [round(rng.uniform(-0.9, 0.9), 6) for _ in range(rng.randrange(1, 15))]
            pairs, embedder = planted_validation(scores)
            threshold = calibrate_threshold(pairs, embedder)
            matched = sum(
                classify_by_similarity(p, threshold, embedder).label == MATCH
                for p in pairs
            )
            assert matched >= len(pairs) / 2

    def test_threshold_round_trip(self, tmp_path):
        from claimmatcher.baseline import load_threshold, save_threshold

        threshold = Threshold(0.63, "embedding3", 500)
        save_threshold(threshold, tmp_path / "thr.json")
        assert load_threshold(tmp_path / "thr.json") == threshold

    def test_median_is_statistics_median(self):
        # guards against the calibrate implementation drifting from the
        # documented even-n convention
        assert statistics.median([0.4, 0.8]) == pytest.approx(0.6)
