"""End-to-end checks at the default desk-scale configuration."""

import numpy as np
import pytest

from services.config import load_config
from services.harness import run_comparison
from services.sampler import EpisodicMemory, InsertOutcome
from tests.conftest import make_sample


def mean_of(result, name):
    return result.aggregate[name].mean


def test_invariants_over_long_fuzz_run():
    rng = np.random.default_rng(2024)
    capacity = 50
    memory = EpisodicMemory(capacity)
    labels = rng.integers(8, size=100_000)
    scores = rng.random(100_000)
    for i, label in enumerate(labels):
        largest_before = max(memory.group_sizes().values(), default=0)
        was_full = memory.size == capacity
        if memory.insert(make_sample(i, int(label))) is InsertOutcome.EVICTION_REQUIRED:
            memory.debias_evict({s.id: scores[s.id] for s in memory.eviction_candidates()})
        sizes = memory.group_sizes()
        assert memory.size <= capacity
        if was_full:
            assert max(sizes.values()) <= largest_before
        if i % 997 == 0:
            for c, members in memory.groups.items():
                assert all(s.noisy_label == c for s in members)


@pytest.fixture(scope="module")
def symmetric_runs(request):
    path = request.config.rootpath / "configs" / "default.yaml"
    return run_comparison(load_config(path, {"noise_type": "sym", "noise_rate": 0.4}))


@pytest.fixture(scope="module")
def asymmetric_runs(request):
    path = request.config.rootpath / "configs" / "default.yaml"
    return run_comparison(load_config(path, {"noise_type": "asym", "noise_rate": 0.4}))


@pytest.mark.slow
class TestSymmetricNoise:
    def test_all_seeds_succeed(self, symmetric_runs):
        for result in symmetric_runs:
            assert [t.seed for t in result.trials] == [0, 1, 2]
            assert not result.failed

    def test_reservoir_keeps_the_stream_noise_rate(self, symmetric_runs):
        _, reservoir = symmetric_runs
        assert mean_of(reservoir, "last_memory_clean_ratio") == pytest.approx(0.60, abs=0.03)

    def test_ntd_memory_is_cleaner(self, symmetric_runs):
        ntd, reservoir = symmetric_runs
        ntd_clean = mean_of(ntd, "last_memory_clean_ratio")
        assert ntd_clean >= 0.80
        assert ntd_clean >= mean_of(reservoir, "last_memory_clean_ratio") + 0.10

    def test_ntd_accuracy_is_not_worse(self, symmetric_runs):
        ntd, reservoir = symmetric_runs
        assert mean_of(ntd, "last_test_accuracy") >= mean_of(reservoir, "last_test_accuracy")

    def test_ntd_memory_is_balanced(self, symmetric_runs):
        ntd, _ = symmetric_runs
        assert all(t.metrics.group_gap <= 1 for t in ntd.trials)

    def test_timing_split(self, symmetric_runs):
        for result in symmetric_runs:
            for trial in result.trials:
                wall = trial.metrics.wall_time
                assert wall.online_learning + wall.episodic_memory_usage <= wall.overall
                assert wall.overall < 60.0


@pytest.mark.slow
def test_ntd_memory_is_cleaner_under_asymmetric_noise(asymmetric_runs):
    ntd, reservoir = asymmetric_runs
    assert mean_of(ntd, "last_memory_clean_ratio") >= mean_of(reservoir, "last_memory_clean_ratio") + 0.05
