"""
Experiment runner: the full stream loop for one or more seeds.

Per seed the stream is generated, then for every task and mini-batch the
online model takes one SGD step (on the batch plus ``replay_size`` samples
drawn from the memory) and each sample of the batch is offered to the
memory.  After each task (or only after the last one, see
``ExperimentConfig.train_each_task``) a copy of the online model is trained
on the memory and evaluated on the clean test set.
"""

import logging
import resource
import time
from itertools import groupby
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from services.config import ExperimentConfig
from services.learner import OnlineModel, train_on_memory
from services.metrics import (
    Metrics,
    MetricSummary,
    TaskTrace,
    TrialError,
    TrialResult,
    WallTime,
    aggregate_trials,
)
from services.sampler import EpisodicMemory, InsertOutcome, ReservoirMemory, Sample
from services.scoring import AugmentationPolicySet, score_candidates
from services.streamgen import (
    ClassGenerator,
    derive_rng,
    generate_stream,
    make_test_set,
    stream_digest,
)

logger = logging.getLogger(__name__)

# Sub-streams of the trial seed, disjoint from the generator's own
_RESERVOIR_STREAM = 16
_INIT_STREAM = 17
_SHUFFLE_STREAM = 18
_REPLAY_STREAM = 19

Memory = Union[EpisodicMemory, ReservoirMemory]


class ExperimentResult(BaseModel):
    config: ExperimentConfig
    trials: List[TrialResult]
    aggregate: Dict[str, MetricSummary]

    @property
    def sampler(self) -> str:
        return self.config.sampler

    @property
    def failed(self) -> List[TrialResult]:
        return [t for t in self.trials if not t.ok]


def _peak_rss_kib() -> int:
    # ru_maxrss is KiB on Linux and never decreases over the life of the process
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)


def replay_batch(
    memory: Memory, size: int, rng: np.random.Generator
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Uniform draw of up to ``size`` stored samples, without replacement."""
    stored = memory.samples()
    if size <= 0 or not stored:
        return None
    picks = rng.choice(len(stored), size=min(size, len(stored)), replace=False)
    X = np.stack([stored[i].features for i in picks])
    y = np.array([stored[i].noisy_label for i in picks])
    return X, y


def feature_scale(samples: List[Sample]) -> np.ndarray:
    """Per-dimension std of the training features; zero-variance dims get 1."""
    std = np.std(np.stack([s.features for s in samples]), axis=0)
    return np.where(std > 0, std, 1.0)


class _NTDStep:
    """Insert-then-evict for one sample, with cached augmented views."""

    def __init__(self, memory: EpisodicMemory, policies: AugmentationPolicySet):
        self.memory = memory
        self.policies = policies
        self.views: Dict[int, np.ndarray] = {}
        self.evictions = 0

    def __call__(self, sample: Sample, model: OnlineModel) -> None:
        outcome = self.memory.insert(sample)
        self.views[sample.id] = self.policies.augment(sample.features, sample.id)
        if outcome is InsertOutcome.EVICTION_REQUIRED:
            candidates = self.memory.eviction_candidates()
            scores = score_candidates(candidates, self.views, model)
            victim = self.memory.debias_evict(scores)
            del self.views[victim.id]
            self.evictions += 1


class _ReservoirStep:
    def __init__(self, memory: ReservoirMemory):
        self.memory = memory
        self.evictions = 0

    def __call__(self, sample: Sample, model: OnlineModel) -> None:
        if self.memory.offer(sample) is not None:
            self.evictions += 1


def _run_trial(config: ExperimentConfig, seed: int, sampler: str) -> Metrics:
    started = time.perf_counter()
    spec = config.stream.model_copy(update={"seed": seed})
    C = spec.num_classes

    generator = ClassGenerator.from_spec(spec)
    stream = generate_stream(spec, generator)
    test_set = make_test_set(spec, config.test_size, generator)
    X_test = np.stack([s.features for s in test_set])
    y_test = np.array([s.true_label for s in test_set])

    model = OnlineModel.initialize(
        C,
        spec.feature_dim,
        config.learner.online_lr,
        seed=derive_rng(seed, _INIT_STREAM),
        init_scale=config.learner.init_scale,
    )

    if sampler == "ntd":
        memory: Memory = EpisodicMemory(config.memory_size, C)
        policies = AugmentationPolicySet.from_config(config.tta, seed, feature_scale(stream))
        step = _NTDStep(memory, policies)
    elif sampler == "reservoir":
        memory = ReservoirMemory(config.memory_size, C, rng=derive_rng(seed, _RESERVOIR_STREAM))
        step = _ReservoirStep(memory)
    else:
        raise ValueError(f"unknown sampler '{sampler}'")

    replay_rng = derive_rng(seed, _REPLAY_STREAM)
    online_seconds = 0.0
    usage_seconds = 0.0
    traces: List[TaskTrace] = []
    eval_model = model

    for task, task_samples in groupby(stream, key=lambda s: s.task_index):
        task_samples = list(task_samples)
        is_last = task == spec.num_tasks - 1

        # online learning stage: SGD on the live batch plus a replayed memory
        # batch, then memory construction
        t0 = time.perf_counter()
        batch_losses = []
        for start in range(0, len(task_samples), config.batch_size):
            batch = task_samples[start:start + config.batch_size]
            X = np.stack([s.features for s in batch])
            y = np.array([s.noisy_label for s in batch])
            replayed = replay_batch(memory, config.replay_size, replay_rng)
            if replayed is not None:
                X = np.concatenate([X, replayed[0]])
                y = np.concatenate([y, replayed[1]])
            batch_losses.append(model.sgd_step(X, y))
            frozen = model.snapshot()
            for s in batch:
                step(s, frozen)
        online_seconds += time.perf_counter() - t0

        accuracy = None
        if config.train_each_task or is_last:
            t0 = time.perf_counter()
            eval_model = model.copy(learning_rate=config.learner.memory_lr)
            train_on_memory(
                eval_model,
                memory,
                config.mem_epochs,
                seed=derive_rng(seed, _SHUFFLE_STREAM, task),
                batch_size=config.batch_size,
            )
            usage_seconds += time.perf_counter() - t0

            seen = np.isin(y_test, spec.classes_seen(task))
            accuracy = eval_model.evaluate(X_test[seen], y_test[seen])

        trace = TaskTrace(
            task_index=task,
            online_loss=float(np.mean(batch_losses)),
            test_accuracy=accuracy,
            memory_clean_ratio=memory.clean_ratio(),
            memory_size=memory.size,
            evictions=step.evictions,
        )
        traces.append(trace)
        logger.info(
            f"[{sampler} seed={seed}] task {task}: online_loss={trace.online_loss:.4f} "
            f"accuracy={accuracy if accuracy is None else round(accuracy, 4)} "
            f"clean_ratio={trace.memory_clean_ratio:.4f} groups={memory.group_sizes()}"
        )

    sizes = memory.group_sizes()
    last_accuracy = eval_model.evaluate(X_test, y_test)
    overall = time.perf_counter() - started

    return Metrics(
        last_test_accuracy=last_accuracy,
        last_memory_clean_ratio=memory.clean_ratio(),
        group_size_histogram=sizes,
        group_gap=max(sizes.values()) - min(sizes.values()),
        per_task=traces,
        wall_time=WallTime(
            online_learning=online_seconds,
            episodic_memory_usage=usage_seconds,
            overall=overall,
        ),
        peak_rss_kib=_peak_rss_kib(),
        stream_digest=stream_digest(stream),
    )


def run_trial(config: ExperimentConfig, seed: int, sampler: Optional[str] = None) -> TrialResult:
    """One seed; failures become an error record instead of propagating."""
    sampler = sampler or config.sampler
    logger.info(f"Starting {sampler} trial seed={seed}")
    try:
        metrics = _run_trial(config, seed, sampler)
    except Exception as e:
        logger.exception(f"Trial {sampler} seed={seed} failed: {e}")
        return TrialResult(seed=seed, sampler=sampler, error=TrialError.from_exception(e))

    logger.info(
        f"Finished {sampler} trial seed={seed}: accuracy={metrics.last_test_accuracy:.4f} "
        f"clean_ratio={metrics.last_memory_clean_ratio:.4f} "
        f"overall={metrics.wall_time.overall:.2f}s"
    )
    return TrialResult(seed=seed, sampler=sampler, metrics=metrics)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    trials = [run_trial(config, seed) for seed in config.trials]
    result = ExperimentResult(config=config, trials=trials, aggregate=aggregate_trials(trials))
    if result.failed:
        logger.warning(f"{len(result.failed)} of {len(trials)} {config.sampler} trials failed")
    return result


def run_baseline_reservoir(config: ExperimentConfig) -> ExperimentResult:
    """Same protocol with algorithm-R replacement instead of NTD insert/evict."""
    return run_experiment(config.model_copy(update={"sampler": "reservoir"}))


def run_comparison(config: ExperimentConfig) -> List[ExperimentResult]:
    """NTD and reservoir on identical streams (same seeds, same generator)."""
    return [
        run_experiment(config.model_copy(update={"sampler": "ntd"})),
        run_baseline_reservoir(config),
    ]
