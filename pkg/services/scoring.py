"""
Test-time augmentation scoring.

Each sample is scored by the mean cross-entropy of the current model over a
fixed set of feature-space augmentation policies.  Policy randomness is
keyed on (seed, policy index, sample id), so a sample's augmented views are
the same no matter when or where they are computed.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from services.errors import DimensionMismatchError, NonFiniteLossError
from services.learner import OnlineModel, cross_entropy

logger = logging.getLogger(__name__)


class PolicyKind(str, Enum):
    IDENTITY = "identity"
    JITTER = "jitter"
    DROPOUT = "dropout"


@dataclass(frozen=True)
class AugmentationPolicy:
    kind: PolicyKind
    # jitter: multiple of the per-dimension feature std; dropout: zeroing rate
    magnitude: float = 0.0


class PolicyConfig(BaseModel):
    jitter_count: int = Field(4, ge=0)
    jitter_scale: float = Field(0.1, ge=0)
    dropout_count: int = Field(3, ge=0)
    dropout_rate: float = Field(0.1, ge=0, lt=1)

    @property
    def count(self) -> int:
        return 1 + self.jitter_count + self.dropout_count

    @classmethod
    def from_count(cls, count: int, **kwargs) -> "PolicyConfig":
        """Identity plus ``count - 1`` policies, jitters first when odd."""
        if count < 1:
            raise ValueError(f"policy count must be >= 1, got {count}")
        extra = count - 1
        jitters = (extra + 1) // 2
        return cls(jitter_count=jitters, dropout_count=extra - jitters, **kwargs)

    def policies(self) -> List[AugmentationPolicy]:
        return (
            [AugmentationPolicy(PolicyKind.IDENTITY)]
            + [AugmentationPolicy(PolicyKind.JITTER, self.jitter_scale)] * self.jitter_count
            + [AugmentationPolicy(PolicyKind.DROPOUT, self.dropout_rate)] * self.dropout_count
        )


class AugmentationPolicySet:
    """Ordered, replayable set of augmentation policies; the first is always identity."""

    def __init__(
        self,
        policies: Sequence[AugmentationPolicy],
        seed: int,
        feature_scale: np.ndarray,
    ):
        if not policies:
            raise ValueError("an augmentation policy set needs at least one policy")
        if policies[0].kind is not PolicyKind.IDENTITY:
            raise ValueError("the first policy must be the identity")
        self.policies = list(policies)
        self.seed = int(seed)
        self.feature_scale = np.asarray(feature_scale, dtype=np.float64)
        if self.feature_scale.ndim != 1:
            raise ValueError("feature_scale must be a vector")

    @classmethod
    def from_config(
        cls, config: PolicyConfig, seed: int, feature_scale: np.ndarray
    ) -> "AugmentationPolicySet":
        return cls(config.policies(), seed, feature_scale)

    @property
    def count(self) -> int:
        return len(self.policies)

    def __len__(self) -> int:
        return self.count

    @property
    def dim(self) -> int:
        return self.feature_scale.shape[0]

    def apply_policy(self, index: int, x: np.ndarray, sample_id: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionMismatchError(self.dim, x.shape[-1] if x.ndim else 0)
        if not 0 <= index < self.count:
            raise IndexError(f"policy index {index} outside [0, {self.count})")

        policy = self.policies[index]
        if policy.kind is PolicyKind.IDENTITY or policy.magnitude == 0:
            return x.copy()

        rng = np.random.default_rng([self.seed, index, sample_id])
        if policy.kind is PolicyKind.JITTER:
            return x + rng.standard_normal(self.dim) * (policy.magnitude * self.feature_scale)
        # dropout
        return np.where(rng.random(self.dim) < policy.magnitude, 0.0, x)

    def augment(self, x: np.ndarray, sample_id: int) -> np.ndarray:
        """All views of ``x``, one row per policy."""
        return np.stack([self.apply_policy(i, x, sample_id) for i in range(self.count)])


# ---------------------------------------------------------------------
# Mean augmentation loss
# ---------------------------------------------------------------------
def mean_loss(losses) -> float:
    """Order-independent mean of per-policy losses.

    Summing offsets from the minimum with fsum gives the same result for
    any ordering, and exactly the common value when all losses are equal.
    """
    losses = np.asarray(losses, dtype=np.float64)
    base = float(np.min(losses))
    return base + math.fsum((losses - base).tolist()) / losses.size


def _check_finite(logits: np.ndarray) -> None:
    finite = np.isfinite(logits)
    if not finite.all():
        # policies sit on the second-to-last axis
        bad = np.flatnonzero((~finite.all(axis=-1)).reshape(-1, logits.shape[-2]).any(axis=0))
        raise NonFiniteLossError(int(bad[0]))


def policy_losses(views: np.ndarray, label: int, model: OnlineModel) -> np.ndarray:
    """Cross-entropy of each augmented view against ``label``."""
    logits = model.logits(np.asarray(views, dtype=np.float64))
    _check_finite(logits)
    return cross_entropy(logits, label)


def tta_mean_loss(
    x: np.ndarray,
    noisy_label: int,
    model: OnlineModel,
    policies: AugmentationPolicySet,
    sample_id: int = 0,
) -> float:
    """Mean cross-entropy over all augmentation policies applied to ``x``."""
    views = policies.augment(x, sample_id)
    return mean_loss(policy_losses(views, noisy_label, model))


def tta_mean_losses(
    views: np.ndarray, labels: Sequence[int], model: OnlineModel
) -> np.ndarray:
    """Vectorised ``tta_mean_loss`` for precomputed views of shape (n, |policies|, d)."""
    views = np.asarray(views, dtype=np.float64)
    logits = model.logits(views)
    _check_finite(logits)
    losses = cross_entropy(logits, np.asarray(labels)[:, None])
    return np.array([mean_loss(row) for row in losses])


def score_candidates(
    candidates, views_by_id, model: OnlineModel, policies: Optional[AugmentationPolicySet] = None
) -> dict:
    """Map sample id -> mean augmentation loss for every candidate.

    Views are looked up in ``views_by_id`` and computed (and cached) when
    missing; ``policies`` is required in that case.
    """
    rows = []
    for s in candidates:
        cached = views_by_id.get(s.id)
        if cached is None:
            if policies is None:
                raise KeyError(f"no cached views for sample {s.id}")
            cached = views_by_id[s.id] = policies.augment(s.features, s.id)
        rows.append(cached)
    scores = tta_mean_losses(np.stack(rows), [s.noisy_label for s in candidates], model)
    return {s.id: float(score) for s, score in zip(candidates, scores)}
