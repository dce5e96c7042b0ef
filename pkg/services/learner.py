"""
Multinomial logistic regression trained by streaming SGD.

The same cross-entropy is used for online updates, the memory-usage stage
and augmentation scoring, so scores and training share one loss.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import orjson
from pydantic import BaseModel, Field

from services.errors import (
    DimensionMismatchError,
    NonFiniteGradientError,
    NonFiniteInputError,
)

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]


class LearnerConfig(BaseModel):
    online_lr: float = Field(0.005, gt=0)
    memory_lr: float = Field(0.01, gt=0)
    init_scale: float = Field(0.01, ge=0)


# ---------------------------------------------------------------------
# Loss helpers
# ---------------------------------------------------------------------
def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    """Per-row softmax cross-entropy in nats; logits (..., C), labels broadcast to (...)."""
    labels = np.asarray(labels)
    log_p = log_softmax(logits)
    labels = np.broadcast_to(labels, log_p.shape[:-1])
    picked = np.take_along_axis(log_p, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    return -picked


# ---------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------
@dataclass
class OnlineModel:
    weights: np.ndarray
    bias: np.ndarray
    learning_rate: float
    step_count: int = 0
    frozen: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"weights must be CxD and bias length C, got {self.weights.shape} and {self.bias.shape}"
            )
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")

    @classmethod
    def initialize(
        cls,
        num_classes: int,
        feature_dim: int,
        learning_rate: float,
        seed: SeedLike = None,
        init_scale: float = 0.01,
    ) -> "OnlineModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        weights = rng.uniform(-init_scale, init_scale, size=(num_classes, feature_dim))
        return cls(weights=weights, bias=np.zeros(num_classes), learning_rate=learning_rate)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def _check_inputs(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.feature_dim:
            raise DimensionMismatchError(self.feature_dim, X.shape[-1])
        if not np.all(np.isfinite(X)):
            raise NonFiniteInputError("input features contain NaN or inf")
        return X

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for one feature vector (or a batch of rows)."""
        x = self._check_inputs(x)
        return softmax(self.logits(x))

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        X = self._check_inputs(X)
        return np.argmax(self.logits(X), axis=-1)

    def evaluate(self, X: np.ndarray, y: np.ndarray) -> float:
        """Accuracy on (X, y)."""
        if len(y) == 0:
            return 0.0
        return float(np.mean(self.predict_labels(X) == np.asarray(y)))

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        """Summed cross-entropy over the batch."""
        X = self._check_inputs(X)
        return float(np.sum(cross_entropy(self.logits(X), y)))

    def gradients(self, X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        """Gradient of the summed batch loss, plus the mean loss."""
        X = self._check_inputs(np.atleast_2d(X))
        y = np.asarray(y, dtype=np.intp)
        logits = self.logits(X)
        residual = softmax(logits)
        residual[np.arange(len(y)), y] -= 1.0
        grad_w = residual.T @ X
        grad_b = residual.sum(axis=0)
        mean_loss = float(np.mean(cross_entropy(logits, y)))
        return grad_w, grad_b, mean_loss

    def sgd_step(self, X: np.ndarray, y: np.ndarray) -> float:
        """One full-batch step on the summed loss; returns the mean batch loss."""
        if self.frozen:
            raise RuntimeError("cannot update a frozen model snapshot")
        if len(y) == 0:
            raise ValueError("sgd_step needs a non-empty batch")

        grad_w, grad_b, mean_loss = self.gradients(X, y)
        if not (np.all(np.isfinite(grad_w)) and np.all(np.isfinite(grad_b))):
            raise NonFiniteGradientError(
                self.step_count, len(y), float(np.linalg.norm(self.weights))
            )

        self.weights = self.weights - self.learning_rate * grad_w
        self.bias = self.bias - self.learning_rate * grad_b
        self.step_count += 1
        return mean_loss

    def copy(self, learning_rate: Optional[float] = None) -> "OnlineModel":
        return OnlineModel(
            weights=self.weights.copy(),
            bias=self.bias.copy(),
            learning_rate=self.learning_rate if learning_rate is None else learning_rate,
            step_count=self.step_count,
        )

    def snapshot(self) -> "OnlineModel":
        """Read-only copy for scoring while the live model keeps training."""
        frozen = self.copy()
        frozen.weights.flags.writeable = False
        frozen.bias.flags.writeable = False
        frozen.frozen = True
        return frozen

    # -----------------------------------------------------------------
    # Checkpoints
    # -----------------------------------------------------------------
    def to_checkpoint(self) -> dict:
        return {
            "header": {
                "C": self.num_classes,
                "d": self.feature_dim,
                "step_count": self.step_count,
                "learning_rate": self.learning_rate,
            },
            "params": np.concatenate([self.weights.ravel(), self.bias]).tolist(),
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "OnlineModel":
        header = payload["header"]
        C, d = int(header["C"]), int(header["d"])
        params = np.asarray(payload["params"], dtype=np.float64)
        if params.shape != (C * d + C,):
            raise ValueError(f"checkpoint has {params.size} params, expected {C * d + C}")
        return cls(
            weights=params[: C * d].reshape(C, d),
            bias=params[C * d:],
            learning_rate=float(header.get("learning_rate", 0.0)),
            step_count=int(header["step_count"]),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(orjson.dumps(self.to_checkpoint()))

    @classmethod
    def load(cls, path) -> "OnlineModel":
        return cls.from_checkpoint(orjson.loads(Path(path).read_bytes()))


# ---------------------------------------------------------------------
# Memory-usage stage
# ---------------------------------------------------------------------
def train_on_memory(
    model: OnlineModel,
    memory,
    epochs: int,
    seed: SeedLike = None,
    batch_size: int = 16,
) -> Tuple[OnlineModel, List[float]]:
    """Mini-batch SGD over the memory contents, reshuffled every epoch.

    Updates ``model`` in place.  The trace holds the mean loss over the
    whole memory after each epoch.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    samples = memory.samples()
    if not samples:
        raise ValueError("cannot train on an empty memory")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = np.stack([s.features for s in samples])
    y = np.array([s.noisy_label for s in samples], dtype=np.intp)

    trace: List[float] = []
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            model.sgd_step(X[idx], y[idx])
        trace.append(model.loss(X, y) / len(y))
        logger.debug(f"Memory epoch {epoch + 1}/{epochs}: loss={trace[-1]:.4f}")

    return model, trace
