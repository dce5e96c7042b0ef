import itertools

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from services.streamgen import (
    ClassGenerator,
    NoiseType,
    StreamSpec,
    export_stream,
    generate_stream,
    import_stream,
    inject_noise,
    make_test_set,
    stream_digest,
)


def small_spec(**overrides):
    values = dict(num_classes=4, feature_dim=8, samples_per_task=100, num_tasks=2, seed=0)
    values.update(overrides)
    return StreamSpec(**values)


class TestStreamSpec:
    def test_default_partition(self):
        spec = StreamSpec()
        assert spec.classes_per_task == [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]
        assert spec.stream_length == 10_000

    def test_noise_aliases(self):
        assert small_spec(noise_type="sym").noise_type is NoiseType.SYMMETRIC
        assert small_spec(noise_type="asym").noise_type is NoiseType.ASYMMETRIC

    @pytest.mark.parametrize(
        "overrides",
        [
            {"noise_rate": 1.5},
            {"noise_rate": -0.1},
            {"boundary_fuzz": 0.5},
            {"num_tasks": 5},
            {"num_classes": 1},
            {"classes_per_task": [[0, 1], [1, 2]]},
            {"classes_per_task": [[0, 1], []]},
            {"classes_per_task": [[0, 1], [2, 7]]},
            {"classes_per_task": [[0, 1, 2, 3]]},
            {"noise_type": "uniform"},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ValidationError):
            small_spec(**overrides)

    def test_successor_cycles_within_task(self):
        spec = small_spec(num_classes=6, classes_per_task=[[0, 1, 2], [3, 4, 5]])
        assert [spec.successor(c) for c in range(6)] == [1, 2, 0, 4, 5, 3]

    def test_classes_seen(self):
        spec = small_spec()
        assert spec.classes_seen(0) == [0, 1]
        assert spec.classes_seen(1) == [0, 1, 2, 3]


class TestClassGenerator:
    @pytest.mark.parametrize("num_classes,dim", [(4, 8), (10, 32), (4, 3)])
    def test_means_are_separated(self, num_classes, dim):
        spec = small_spec(num_classes=num_classes, feature_dim=dim, num_tasks=2, data_spread=0.5)
        means = ClassGenerator.from_spec(spec).means
        assert means.shape == (num_classes, dim)
        for a, b in itertools.combinations(range(num_classes), 2):
            assert np.linalg.norm(means[a] - means[b]) >= 4.0 * 0.5 - 1e-9

    def test_draws_center_on_means(self):
        spec = small_spec()
        generator = ClassGenerator.from_spec(spec)
        rng = np.random.default_rng(0)
        draws = np.stack([generator.draw(2, rng) for _ in range(4000)])
        np.testing.assert_allclose(draws.mean(axis=0), generator.means[2], atol=0.1)


class TestTaskBoundaries:
    def test_hard_boundaries(self):
        spec = small_spec(boundary_fuzz=0.0, samples_per_task=300, noise_rate=0.0)
        stream = generate_stream(spec)
        for s in stream:
            assert s.true_label in spec.classes_per_task[s.id // 300]
            assert s.task_index == s.id // 300
        for task, subset in enumerate(spec.classes_per_task):
            emitted = {s.true_label for s in stream if s.task_index == task}
            assert emitted == set(subset)

    def test_single_task_is_uniform_over_classes(self):
        spec = small_spec(num_tasks=1, samples_per_task=10_000, noise_rate=0.0)
        labels = np.array([s.true_label for s in generate_stream(spec)])
        freq = np.bincount(labels, minlength=4) / len(labels)
        np.testing.assert_allclose(freq, 0.25, atol=0.03)

    def test_fuzzy_window_crossfades(self):
        spec = small_spec(samples_per_task=10_000, boundary_fuzz=0.2, noise_rate=0.0)
        stream = generate_stream(spec)
        second = set(spec.classes_per_task[1])
        # window [8000, 12000), five slices of 800
        window = stream[8000:12_000]
        fractions = [
            np.mean([s.true_label in second for s in window[i : i + 800]]) for i in range(0, 4000, 800)
        ]
        assert all(a < b for a, b in zip(fractions, fractions[1:]))
        assert fractions[0] < 0.2
        assert fractions[-1] > 0.8
        assert all(s.true_label not in second for s in stream[:8000])
        assert all(s.true_label in second for s in stream[12_000:])


class TestInjectNoise:
    def test_zero_rate_keeps_labels(self):
        spec = small_spec(noise_rate=0.0)
        rng = np.random.default_rng(0)
        assert all(inject_noise(c % 4, spec, rng) == c % 4 for c in range(1000))

    def test_full_symmetric_rate_with_two_classes(self):
        spec = small_spec(num_classes=2, noise_rate=1.0, num_tasks=1)
        rng = np.random.default_rng(1)
        assert all(inject_noise(y, spec, rng) == 1 - y for y in [0, 1] * 500)

    def test_symmetric_rate(self):
        spec = small_spec(noise_rate=0.4)
        rng = np.random.default_rng(2)
        flipped = np.mean([inject_noise(1, spec, rng) != 1 for _ in range(10_000)])
        assert flipped == pytest.approx(0.4, abs=0.02)

    def test_symmetric_flips_are_uniform(self):
        spec = StreamSpec(num_classes=10, feature_dim=4, num_tasks=5, noise_rate=1.0)
        rng = np.random.default_rng(3)
        noisy = np.array([inject_noise(3, spec, rng) for _ in range(100_000)])
        assert not np.any(noisy == 3)
        counts = np.bincount(noisy, minlength=10)
        observed = np.delete(counts, 3)
        assert stats.chisquare(observed).pvalue > 0.01

    def test_asymmetric_goes_to_successor(self):
        spec = small_spec(noise_type="asym", noise_rate=0.4)
        rng = np.random.default_rng(4)
        for true_label in range(4):
            for _ in range(500):
                noisy = inject_noise(true_label, spec, rng)
                assert noisy in (true_label, spec.successor(true_label))


class TestTestSet:
    def test_clean_balanced_and_fresh_ids(self):
        spec = small_spec()
        test = make_test_set(spec, 200)
        assert all(s.is_clean for s in test)
        assert np.bincount([s.true_label for s in test]).tolist() == [50, 50, 50, 50]
        assert min(s.id for s in test) == spec.stream_length

    def test_deterministic(self):
        spec = small_spec()
        assert stream_digest(make_test_set(spec, 40)) == stream_digest(make_test_set(spec, 40))

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_test_set(small_spec(), 3)


class TestDeterminism:
    def test_same_seed_same_stream(self):
        assert stream_digest(generate_stream(small_spec())) == stream_digest(generate_stream(small_spec()))

    def test_different_seed_different_stream(self):
        assert stream_digest(generate_stream(small_spec(seed=1))) != stream_digest(
            generate_stream(small_spec(seed=2))
        )

    def test_noise_rate_does_not_move_features(self):
        clean = generate_stream(small_spec(noise_rate=0.0))
        noisy = generate_stream(small_spec(noise_rate=0.4))
        for a, b in zip(clean, noisy):
            assert a.true_label == b.true_label
            np.testing.assert_array_equal(a.features, b.features)

    def test_export_and_import(self, tmp_path):
        stream = generate_stream(small_spec(samples_per_task=20))
        path = tmp_path / "stream.jsonl"
        export_stream(stream, path)
        assert stream_digest(import_stream(path)) == stream_digest(stream)
