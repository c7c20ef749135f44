"""Metric formulas against closed forms and brute-force re-evaluation."""

import numpy as np
import pytest

from sounddiff import metrics, synth
from sounddiff.annotations import BenchPrompt, EventAnnotation, SedEvent
from sounddiff.metrics import ClassDist, GaussStats


class TestFrechet:
    def test_identical_stats_zero(self):
        stats = GaussStats(mean=np.zeros(3), cov=np.eye(3))
        assert metrics.frechet_distance(stats, stats) == pytest.approx(0.0, abs=1e-9)

    def test_mean_shift_only(self):
        a = GaussStats(mean=np.array([1.0, 0.0]), cov=np.eye(2))
        b = GaussStats(mean=np.zeros(2), cov=np.eye(2))
        assert metrics.frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_scalar_variances(self):
        a = GaussStats(mean=np.zeros(1), cov=np.array([[4.0]]))
        b = GaussStats(mean=np.zeros(1), cov=np.array([[1.0]]))
        # 4 + 1 - 2*sqrt(4*1) = 1
        assert metrics.frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(20):
            x = rng.standard_normal((40, 5))
            y = rng.standard_normal((40, 5)) * 2 + 0.3
            a, b = GaussStats.from_samples(x), GaussStats.from_samples(y)
            ab = metrics.frechet_distance(a, b)
            ba = metrics.frechet_distance(b, a)
            assert ab == pytest.approx(ba, rel=1e-8, abs=1e-9)
            assert ab >= 0.0

    def test_dimension_mismatch(self):
        a = GaussStats(mean=np.zeros(2), cov=np.eye(2))
        b = GaussStats(mean=np.zeros(3), cov=np.eye(3))
        with pytest.raises(ValueError):
            metrics.frechet_distance(a, b)

    def test_non_psd_rejected(self):
        with pytest.raises(ValueError):
            GaussStats(mean=np.zeros(2), cov=np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestKL:
    def test_identical_zero(self):
        dists = [ClassDist(np.array([0.3, 0.7])), ClassDist(np.array([0.5, 0.5]))]
        assert metrics.kl_score(dists, dists) == pytest.approx(0.0, abs=1e-12)

    def test_one_hot_vs_uniform(self):
        ref = [ClassDist(np.array([1.0, 0.0]))]
        gen = [ClassDist(np.array([0.5, 0.5]))]
        assert metrics.kl_score(ref, gen) == pytest.approx(np.log(2.0), abs=1e-9)

    def test_matches_brute_force_sum_and_asymmetry(self):
        rng = np.random.Generator(np.random.PCG64(1))
        for _ in range(20):
            p = rng.dirichlet(np.ones(6))
            q = rng.dirichlet(np.ones(6))
            ours = metrics.kl_score([ClassDist(p)], [ClassDist(q)])
            brute = sum(
                p[k] * (np.log(p[k]) - np.log(max(q[k], 1e-10))) for k in range(6) if p[k] > 0
            )
            assert ours == pytest.approx(brute, rel=1e-10)
            flipped = metrics.kl_score([ClassDist(q)], [ClassDist(p)])
            if not np.allclose(p, q):
                assert ours != pytest.approx(flipped, abs=1e-12)

    def test_length_mismatch(self):
        d = ClassDist(np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            metrics.kl_score([d], [d, d])


class TestInceptionScore:
    def test_uniform_rows_give_one(self):
        rows = [ClassDist(np.full(4, 0.25)) for _ in range(10)]
        assert metrics.inception_score(rows) == pytest.approx(1.0, abs=1e-12)

    def test_balanced_one_hots_give_k(self):
        k = 5
        rows = [ClassDist(np.eye(k)[i % k]) for i in range(k * 4)]
        assert metrics.inception_score(rows) == pytest.approx(k, rel=1e-9)

    def test_identical_one_hot_gives_one(self):
        rows = [ClassDist(np.eye(3)[0]) for _ in range(7)]
        assert metrics.inception_score(rows) == pytest.approx(1.0, abs=1e-9)

    def test_bounds_over_random_matrices(self):
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(1000):
            k = int(rng.integers(2, 8))
            n = int(rng.integers(1, 12))
            rows = [ClassDist(rng.dirichlet(np.full(k, 0.4))) for _ in range(n)]
            score = metrics.inception_score(rows)
            assert 1.0 - 1e-9 <= score <= k + 1e-9

    def test_duplication_invariance(self):
        rng = np.random.Generator(np.random.PCG64(4))
        rows = [ClassDist(rng.dirichlet(np.ones(5))) for _ in range(6)]
        once = metrics.inception_score(rows)
        twice = metrics.inception_score(rows + rows)
        assert once == pytest.approx(twice, rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics.inception_score([])


class TestCosine:
    def test_identical(self):
        v = np.array([1.0, 2.0, 3.0])
        assert metrics.cosine_align(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert metrics.cosine_align(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)

    def test_antiparallel(self):
        v = np.array([1.0, -2.0])
        assert metrics.cosine_align(v, -v) == pytest.approx(-1.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            metrics.cosine_align(np.zeros(3), np.ones(3))


def _ann(category, sed, time_relation):
    return EventAnnotation(caption="", category=category, sed=sed, time_relation=time_relation)


class TestJudge:
    def test_timestamp_within_tolerance(self):
        # crowd cheering prompted at 2.0-6.0, detected 2.5-6.8 -> correct
        prompt = BenchPrompt(
            id="p", type="category+timestamp",
            prompt="The sound of a crowd cheering is present from 2.0 seconds to 6.0 seconds.",
            category=["crowd cheering"],
            timestamp={"crowd cheering": {"start": 2.0, "end": 6.0}},
        )
        detected = _ann(
            {"crowd cheering": 1},
            [SedEvent(2.5, 6.8, "The sound of a crowd cheering.")],
            ("crowd cheering",),
        )
        assert metrics.judge_accuracies(prompt, detected)["ts"] == 1

    def test_timestamp_outside_tolerance(self):
        prompt = BenchPrompt(
            id="p", type="category+timestamp", prompt="",
            category=["crowd cheering"],
            timestamp={"crowd cheering": {"start": 2.0, "end": 6.0}},
        )
        detected = _ann(
            {"crowd cheering": 1},
            [SedEvent(3.5, 6.5, "The sound of a crowd cheering.")],
            ("crowd cheering",),
        )
        assert metrics.judge_accuracies(prompt, detected)["ts"] == 0

    def test_ordering_reversed_fails(self):
        prompt = BenchPrompt(
            id="p", type="category+ordering",
            prompt="The sound of a person gargling, followed by the splash of water.",
            category=["gargle", "water splash"],
            time_relation=["gargle", "water splash"],
        )
        detected = _ann(
            {"water splash": 1, "gargle": 1},
            [
                SedEvent(1.0, 2.0, "The sound of a water splash."),
                SedEvent(3.0, 4.0, "The sound of a gargle."),
            ],
            ("water splash", "gargle"),
        )
        assert metrics.judge_accuracies(prompt, detected)["ord"] == 0

    def test_missing_category_fails_cat(self):
        prompt = BenchPrompt(
            id="p", type="category-only", prompt="Thunder and a wave crash.",
            category=["thunder", "wave crash"],
        )
        detected = _ann(
            {"thunder": 1, "rain": None},
            [
                SedEvent(0.0, 3.0, "The sound of a thunder."),
                SedEvent(4.0, 10.0, "The sound of a rain."),
            ],
            "interleave",
        )
        assert metrics.judge_accuracies(prompt, detected)["cat"] == 0

    def test_count_exact_match(self):
        prompt = BenchPrompt(
            id="p", type="category+count", prompt="A single, loud bark from a dog.",
            category=["dog bark"], count={"dog bark": 1},
        )
        hit = _ann({"dog bark": 1}, [SedEvent(1.0, 1.4, "The sound of a dog bark.")], ("dog bark",))
        miss = _ann(
            {"dog bark": 2},
            [
                SedEvent(1.0, 1.4, "The sound of a dog bark."),
                SedEvent(2.0, 2.4, "The sound of a dog bark."),
            ],
            ("dog bark",),
        )
        assert metrics.judge_accuracies(prompt, hit)["cnt"] == 1
        assert metrics.judge_accuracies(prompt, miss)["cnt"] == 0

    def test_malformed_prompt_rejected(self):
        bad = BenchPrompt(id="p", type="category+count", prompt="", category=["yip"], count=None)
        with pytest.raises(ValueError):
            metrics.judge_accuracies(bad, _ann({}, [], ()))


class TestAudioTime:
    def test_frequency_l1(self):
        detected = _ann(
            {"yip": 3},
            [SedEvent(1.0, 1.5, "The sound of a yip."), SedEvent(2.0, 2.5, "The sound of a yip."),
             SedEvent(3.0, 3.5, "The sound of a yip.")],
            ("yip",),
        )
        out = metrics.audiotime_errors(
            {"order": ["yip"], "duration_s": 1.5, "count": 2, "intervals": [(1.0, 1.5), (2.0, 2.5)]},
            detected,
        )
        assert out["frequency_l1"] == pytest.approx(1.0)

    def test_duration_l1(self):
        detected = _ann(
            {"rain": 1}, [SedEvent(0.0, 2.7, "The sound of a rain.")], ("rain",)
        )
        out = metrics.audiotime_errors(
            {"order": ["rain"], "duration_s": 4.0, "count": 1, "intervals": [(0.0, 4.0)]}, detected
        )
        assert out["duration_l1"] == pytest.approx(1.3)

    def test_exact_intervals_f1_one(self):
        detected = _ann(
            {"yip": 2},
            [SedEvent(1.0, 1.5, "The sound of a yip."), SedEvent(4.0, 4.5, "The sound of a yip.")],
            ("yip",),
        )
        out = metrics.audiotime_errors(
            {"order": ["yip"], "duration_s": 1.0, "count": 2, "intervals": [(1.0, 1.5), (4.0, 4.5)]},
            detected,
        )
        assert out["timestamp_f1"] == pytest.approx(1.0)
        assert out["ordering"] == 0.0

    def test_malformed_target(self):
        with pytest.raises(ValueError):
            metrics.audiotime_errors({"order": []}, _ann({}, [], ()))


class TestToyEmbedder:
    def test_deterministic(self):
        wave, _ = synth.gen_clip(synth.ClipSpec(events=(synth.EventRequest("siren", 1),)), seed=0)
        assert np.array_equal(metrics.toy_embed(wave), metrics.toy_embed(wave))

    def test_class_probs_peak_on_true_category(self):
        wave, _ = synth.gen_clip(synth.ClipSpec(events=(synth.EventRequest("siren", 1),)), seed=1)
        probs = metrics.toy_class_probs(wave).probs
        assert synth.CATEGORY_NAMES[int(np.argmax(probs))] == "siren"

    def test_text_audio_alignment_signal(self):
        wave, ann = synth.gen_clip(synth.ClipSpec(events=(synth.EventRequest("siren", 1),)), seed=2)
        matched = metrics.cosine_align(metrics.toy_embed(wave), metrics.text_embed(ann.caption))
        mismatched = metrics.cosine_align(
            metrics.toy_embed(wave), metrics.text_embed("The audio contains one dog bark sound.")
        )
        assert matched != mismatched


class TestReport:
    def test_accuracy_is_mean_of_binaries(self):
        report = metrics.MetricReport()
        report.per_sample = [{"cat": 1}, {"cat": 0}, {"cat": 1}, {"cat": None}]
        report.finalize_accuracies(["cat"])
        assert report.aggregates["cat"] == pytest.approx(2 / 3)

    def test_csv_has_summary_row(self):
        report = metrics.MetricReport(per_sample=[{"id": "a", "cat": 1}], aggregates={"cat": 1.0})
        text = report.to_csv()
        assert "aggregate" in text and "cat=1" in text
