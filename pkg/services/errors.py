"""Exception hierarchy shared by the sampler, scorer, learner and harness."""

from typing import Optional


class NTDError(Exception):
    """Root of every error raised by this package."""


# ---------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------
class SamplerError(NTDError):
    pass


class DuplicateSampleError(SamplerError):
    """A sample id was seen twice (or went backwards): the stream is corrupt."""

    def __init__(self, sample_id: int, last_id: Optional[int]):
        self.sample_id = sample_id
        self.last_id = last_id
        super().__init__(
            f"sample id {sample_id} is not greater than last inserted id {last_id}; corrupt stream"
        )


class ProtocolViolationError(SamplerError):
    """debias_evict was called without exactly one pending tentative insert."""


class IncompleteScoresError(SamplerError):
    def __init__(self, missing_ids):
        self.missing_ids = sorted(missing_ids)
        super().__init__(f"missing scores for sample ids {self.missing_ids[:10]}")


class UndefinedRatioError(SamplerError):
    pass


# ---------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------
class ScoringError(NTDError):
    pass


class DimensionMismatchError(ScoringError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"feature dimension mismatch: expected {expected}, got {got}")


class NonFiniteLossError(ScoringError):
    def __init__(self, policy_index: int):
        self.policy_index = policy_index
        super().__init__(f"non-finite model output under augmentation policy {policy_index}")


# ---------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------
class LearnerError(NTDError):
    pass


class NonFiniteInputError(LearnerError):
    pass


class NonFiniteGradientError(LearnerError):
    def __init__(self, step_count: int, batch_size: int, weight_norm: float):
        self.step_count = step_count
        self.batch_size = batch_size
        self.weight_norm = weight_norm
        super().__init__(
            f"non-finite gradient at step {step_count} "
            f"(batch_size={batch_size}, |W|={weight_norm:.4g})"
        )


# ---------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------
class ConfigError(NTDError):
    pass


class ReportError(NTDError):
    pass
