"""
Synthetic class-incremental streams with fuzzy task boundaries and label noise.

Each class is an isotropic Gaussian blob.  Tasks own disjoint class subsets
and are emitted back to back; around each boundary a window of width
``2 * boundary_fuzz * samples_per_task`` cross-fades linearly from the old
task's classes to the new task's classes.
"""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from services.errors import ConfigError
from services.sampler import Sample

logger = logging.getLogger(__name__)

# Independent RNG streams derived from one seed
_GEOMETRY, _TRAIN, _NOISE, _TEST = range(4)

_REJECTION_ATTEMPTS = 10_000


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for a named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=stream))


class NoiseType(str, Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


_NOISE_ALIASES = {"sym": NoiseType.SYMMETRIC, "asym": NoiseType.ASYMMETRIC}


class StreamSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(10, ge=2)
    feature_dim: int = Field(32, ge=1)
    samples_per_task: int = Field(2000, ge=1)
    num_tasks: int = Field(5, ge=1)
    classes_per_task: Optional[List[List[int]]] = None
    boundary_fuzz: float = Field(0.1, ge=0, lt=0.5)
    noise_type: NoiseType = NoiseType.SYMMETRIC
    noise_rate: float = Field(0.4, ge=0, le=1)
    seed: int = Field(0, ge=0)
    data_spread: float = Field(1.0, gt=0)
    # distance between class means, in units of data_spread
    class_separation: float = Field(4.0, ge=4.0)

    @field_validator("noise_type", mode="before")
    @classmethod
    def _expand_noise_alias(cls, value):
        if isinstance(value, str):
            return _NOISE_ALIASES.get(value.lower(), value)
        return value

    @model_validator(mode="before")
    @classmethod
    def _default_partition(cls, data):
        if isinstance(data, dict) and data.get("classes_per_task") is None:
            C = int(data.get("num_classes", cls.model_fields["num_classes"].default))
            T = int(data.get("num_tasks", cls.model_fields["num_tasks"].default))
            if T > C:
                raise ValueError(f"num_tasks ({T}) exceeds num_classes ({C})")
            data = {**data, "classes_per_task": [
                [int(c) for c in chunk] for chunk in np.array_split(np.arange(C), T)
            ]}
        return data

    @model_validator(mode="after")
    def _check_partition(self):
        partition = self.classes_per_task
        if len(partition) != self.num_tasks:
            raise ValueError(
                f"classes_per_task has {len(partition)} subsets for {self.num_tasks} tasks"
            )
        seen = set()
        for subset in partition:
            if not subset:
                raise ValueError("every task needs at least one class")
            for c in subset:
                if not 0 <= c < self.num_classes:
                    raise ValueError(f"class {c} outside [0, {self.num_classes})")
                if c in seen:
                    raise ValueError(f"class {c} appears in more than one task")
                seen.add(c)
        return self

    @property
    def stream_length(self) -> int:
        return self.num_tasks * self.samples_per_task

    def task_of_class(self) -> Dict[int, int]:
        return {c: t for t, subset in enumerate(self.classes_per_task) for c in subset}

    def classes_seen(self, task_index: int) -> List[int]:
        return sorted(c for subset in self.classes_per_task[: task_index + 1] for c in subset)

    def successor(self, label: int) -> int:
        """Cyclic successor of ``label`` within its task's class set."""
        subset = self.classes_per_task[self.task_of_class()[label]]
        return subset[(subset.index(label) + 1) % len(subset)]


@dataclass(frozen=True)
class ClassGenerator:
    means: np.ndarray
    spread: float

    @classmethod
    def from_spec(cls, spec: StreamSpec) -> "ClassGenerator":
        """Place class means at least ``class_separation * data_spread`` apart."""
        rng = derive_rng(spec.seed, _GEOMETRY)
        C, d = spec.num_classes, spec.feature_dim
        distance = spec.class_separation * spec.data_spread

        if C <= d:
            # orthonormal random directions: every pair is exactly `distance` apart
            q, _ = np.linalg.qr(rng.standard_normal((d, C)))
            means = q.T * (distance / np.sqrt(2.0))
        else:
            means = np.empty((C, d))
            placed = 0
            for _ in range(_REJECTION_ATTEMPTS):
                candidate = rng.standard_normal(d)
                candidate *= distance / np.linalg.norm(candidate)
                if placed and np.min(np.linalg.norm(means[:placed] - candidate, axis=1)) < distance:
                    continue
                means[placed] = candidate
                placed += 1
                if placed == C:
                    break
            else:
                raise ConfigError(
                    f"could not place {C} class means {distance:.2f} apart in {d} dimensions"
                )
        return cls(means=means, spread=spec.data_spread)

    def draw(self, label: int, rng: np.random.Generator) -> np.ndarray:
        return self.means[label] + self.spread * rng.standard_normal(self.means.shape[1])


def inject_noise(true_label: int, spec: StreamSpec, rng: np.random.Generator) -> int:
    """Corrupt ``true_label`` with probability ``spec.noise_rate``."""
    if rng.random() >= spec.noise_rate:
        return true_label
    if spec.noise_type is NoiseType.SYMMETRIC:
        other = int(rng.integers(spec.num_classes - 1))
        return other + 1 if other >= true_label else other
    return spec.successor(true_label)


def _source_task(task: int, position: int, half: int, spec: StreamSpec, rng) -> int:
    """Task whose classes generate the sample at ``position`` within ``task``."""
    N, T = spec.samples_per_task, spec.num_tasks
    if half == 0:
        return task
    if position >= N - half and task + 1 < T:
        previous, offset = task, position - (N - half)
    elif position < half and task > 0:
        previous, offset = task - 1, half + position
    else:
        return task
    p_previous = 1.0 - (offset + 0.5) / (2 * half)
    return previous if rng.random() < p_previous else previous + 1


def iter_stream(spec: StreamSpec, generator: Optional[ClassGenerator] = None) -> Iterator[Sample]:
    """Yield the stream one sample at a time; fully determined by ``spec.seed``."""
    generator = generator or ClassGenerator.from_spec(spec)
    train_rng = derive_rng(spec.seed, _TRAIN)
    noise_rng = derive_rng(spec.seed, _NOISE)
    half = int(round(spec.boundary_fuzz * spec.samples_per_task))

    sample_id = 0
    for task in range(spec.num_tasks):
        for position in range(spec.samples_per_task):
            source = _source_task(task, position, half, spec, train_rng)
            subset = spec.classes_per_task[source]
            label = subset[int(train_rng.integers(len(subset)))]
            yield Sample(
                id=sample_id,
                features=generator.draw(label, train_rng),
                noisy_label=inject_noise(label, spec, noise_rng),
                true_label=label,
                task_index=task,
            )
            sample_id += 1


def generate_stream(spec: StreamSpec, generator: Optional[ClassGenerator] = None) -> List[Sample]:
    stream = list(iter_stream(spec, generator))
    noisy = sum(1 for s in stream if not s.is_clean)
    logger.info(
        f"Generated stream seed={spec.seed}: {len(stream)} samples, "
        f"{spec.num_tasks} tasks, realised noise {noisy / max(len(stream), 1):.3f}"
    )
    return stream


def make_test_set(
    spec: StreamSpec, size: int, generator: Optional[ClassGenerator] = None
) -> List[Sample]:
    """Clean, class-balanced held-out samples from the same class generators."""
    if size < spec.num_classes:
        raise ValueError(f"test set size {size} smaller than num_classes {spec.num_classes}")
    generator = generator or ClassGenerator.from_spec(spec)
    rng = derive_rng(spec.seed, _TEST)
    labels = rng.permutation(np.arange(size) % spec.num_classes)
    first_id = spec.stream_length
    return [
        Sample(
            id=first_id + i,
            features=generator.draw(int(label), rng),
            noisy_label=int(label),
            true_label=int(label),
            task_index=-1,
        )
        for i, label in enumerate(labels)
    ]


def stream_digest(samples: Sequence[Sample]) -> str:
    """SHA-256 over ids, labels and feature bytes."""
    h = hashlib.sha256()
    for s in samples:
        h.update(np.array([s.id, s.noisy_label, s.true_label, s.task_index], dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(s.features, dtype=np.float64).tobytes())
    return h.hexdigest()


def export_stream(samples: Sequence[Sample], path) -> None:
    with open(path, "wb") as f:
        for s in samples:
            f.write(orjson.dumps({
                "id": s.id,
                "features": s.features,
                "noisy_label": s.noisy_label,
                "true_label": s.true_label,
                "task_index": s.task_index,
            }, option=orjson.OPT_SERIALIZE_NUMPY))
            f.write(b"\n")
    logger.info(f"Exported {len(samples)} samples to {path}")


def import_stream(path) -> List[Sample]:
    samples = []
    with open(Path(path), "rb") as f:
        for line in f:
            if not line.strip():
                continue
            record = orjson.loads(line)
            samples.append(Sample(
                id=int(record["id"]),
                features=np.asarray(record["features"], dtype=np.float64),
                noisy_label=int(record["noisy_label"]),
                true_label=int(record["true_label"]),
                task_index=int(record.get("task_index", 0)),
            ))
    return samples
