"""
Episodic memory for noisy, task-structured streams.

Samples are grouped by their (possibly noisy) label.  While the memory has
room every arrival is stored.  Once it is full, an arrival is stored
tentatively and the caller must resolve the overflow with
``debias_evict``: the member with the highest mean augmentation loss is
removed from the largest label group.

``ReservoirMemory`` is the uniform-replacement baseline with the same query
surface.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np
import orjson

from services.errors import (
    DuplicateSampleError,
    IncompleteScoresError,
    ProtocolViolationError,
    UndefinedRatioError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Sample:
    """One stream item.

    ``true_label`` exists for evaluation only.  Memory management and
    training read ``noisy_label``.
    """

    id: int
    features: np.ndarray
    noisy_label: int
    true_label: int
    task_index: int = 0

    @property
    def is_clean(self) -> bool:
        return self.noisy_label == self.true_label


class InsertOutcome(str, Enum):
    STORED_DIRECTLY = "stored_directly"
    EVICTION_REQUIRED = "eviction_required"


class _MemoryBase:
    """Read-only queries shared by the NTD memory and the reservoir baseline."""

    def __init__(self, capacity: int, num_classes: Optional[int] = None):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.num_classes = num_classes
        self._last_id: Optional[int] = None

    @property
    def groups(self) -> Dict[int, List[Sample]]:
        raise NotImplementedError

    @property
    def size(self) -> int:
        raise NotImplementedError

    def __len__(self) -> int:
        return self.size

    def _check_sample(self, sample: Sample) -> None:
        if self.num_classes is not None and not 0 <= sample.noisy_label < self.num_classes:
            raise ValueError(
                f"noisy_label {sample.noisy_label} outside [0, {self.num_classes})"
            )
        if self._last_id is not None and sample.id <= self._last_id:
            raise DuplicateSampleError(sample.id, self._last_id)
        self._last_id = sample.id

    def group_sizes(self, classes: Optional[Iterable[int]] = None) -> Dict[int, int]:
        """Size of every non-empty group; requested (or all known) classes report 0."""
        sizes = {c: len(members) for c, members in self.groups.items() if members}
        if classes is None and self.num_classes is not None:
            classes = range(self.num_classes)
        for c in classes or ():
            sizes.setdefault(c, 0)
        return dict(sorted(sizes.items()))

    def samples(self) -> List[Sample]:
        """Stored samples, group by group in class order."""
        return [s for c in sorted(self.groups) for s in self.groups[c]]

    def clean_ratio(self) -> float:
        if self.size == 0:
            raise UndefinedRatioError("clean ratio of an empty memory is undefined")
        clean = sum(1 for s in self.samples() if s.is_clean)
        return clean / self.size

    def dump(self, path) -> None:
        """Write one JSON line per stored sample: id, labels and position in its group."""
        path = Path(path)
        with open(path, "wb") as f:
            for c in sorted(self.groups):
                for position, s in enumerate(self.groups[c]):
                    f.write(orjson.dumps({
                        "id": s.id,
                        "noisy_label": s.noisy_label,
                        "true_label": s.true_label,
                        "group_position": position,
                    }))
                    f.write(b"\n")
        logger.info(f"Dumped {self.size} memory records to {path}")


class EpisodicMemory(_MemoryBase):
    """Capacity-bounded memory partitioned into per-noisy-label groups.

    Single writer: ``insert`` and ``debias_evict`` must be called from the
    stream loop only.
    """

    def __init__(self, capacity: int, num_classes: Optional[int] = None):
        super().__init__(capacity, num_classes)
        self._groups: Dict[int, List[Sample]] = {}
        self._size = 0
        self._pending: Optional[Sample] = None

    @property
    def groups(self) -> Dict[int, List[Sample]]:
        return self._groups

    @property
    def size(self) -> int:
        return self._size

    @property
    def pending(self) -> Optional[Sample]:
        """The tentatively inserted sample awaiting ``debias_evict``, if any."""
        return self._pending

    def insert(self, sample: Sample) -> InsertOutcome:
        if self._pending is not None:
            raise ProtocolViolationError(
                f"sample {self._pending.id} is still pending eviction"
            )
        self._check_sample(sample)

        was_full = self._size >= self.capacity
        self._groups.setdefault(sample.noisy_label, []).append(sample)
        self._size += 1

        if was_full:
            self._pending = sample
            return InsertOutcome.EVICTION_REQUIRED
        return InsertOutcome.STORED_DIRECTLY

    def selected_group(self) -> int:
        """Label of the largest group; ties go to the smallest label."""
        if self._size == 0:
            raise ProtocolViolationError("no groups in an empty memory")
        # max() keeps the first maximum, so iterate labels in ascending order
        return max(sorted(self._groups), key=lambda c: len(self._groups[c]))

    def eviction_candidates(self) -> List[Sample]:
        """Members of the group ``debias_evict`` will remove from."""
        return list(self._groups[self.selected_group()])

    def debias_evict(self, scores: Mapping[int, float]) -> Sample:
        """Remove the highest-score member of the largest group and return it.

        Score ties go to the smallest id.  ``scores`` must cover every member
        of the selected group.
        """
        if self._size != self.capacity + 1:
            raise ProtocolViolationError(
                f"debias_evict requires size == capacity + 1 "
                f"(size={self._size}, capacity={self.capacity})"
            )

        label = self.selected_group()
        group = self._groups[label]
        missing = [s.id for s in group if s.id not in scores]
        if missing:
            raise IncompleteScoresError(missing)

        position = max(range(len(group)), key=lambda i: (scores[group[i].id], -group[i].id))
        victim = group.pop(position)
        if not group:
            del self._groups[label]
        self._size -= 1
        self._pending = None

        logger.debug(
            f"Evicted sample {victim.id} (score={scores[victim.id]:.4f}) from group {label}"
        )
        return victim


class ReservoirMemory(_MemoryBase):
    """Uniform reservoir replacement (algorithm R)."""

    def __init__(
        self,
        capacity: int,
        num_classes: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__(capacity, num_classes)
        self._slots: List[Sample] = []
        self._rng = rng if rng is not None else np.random.default_rng()
        self.seen = 0

    @property
    def groups(self) -> Dict[int, List[Sample]]:
        grouped: Dict[int, List[Sample]] = {}
        for s in sorted(self._slots, key=lambda s: s.id):
            grouped.setdefault(s.noisy_label, []).append(s)
        return grouped

    @property
    def size(self) -> int:
        return len(self._slots)

    def offer(self, sample: Sample) -> Optional[Sample]:
        """Offer one arrival; returns whichever sample left (None if nothing did)."""
        self._check_sample(sample)
        self.seen += 1
        if len(self._slots) < self.capacity:
            self._slots.append(sample)
            return None

        slot = int(self._rng.integers(self.seen))
        if slot < self.capacity:
            replaced = self._slots[slot]
            self._slots[slot] = sample
            return replaced
        return sample
