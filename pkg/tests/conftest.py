import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

# main.py opens its log file at import time
os.environ.setdefault("NTD_LOG_FILE", str(Path(tempfile.gettempdir()) / "ntd-tests.log"))

from services.config import ExperimentConfig, config_from_mapping  # noqa: E402
from services.sampler import Sample  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parents[1]


def make_sample(sample_id, noisy_label, true_label=None, features=None, dim=2):
    return Sample(
        id=sample_id,
        features=np.zeros(dim) if features is None else np.asarray(features, dtype=np.float64),
        noisy_label=noisy_label,
        true_label=noisy_label if true_label is None else true_label,
    )


TINY = {
    "num_classes": 4,
    "feature_dim": 8,
    "samples_per_task": 200,
    "num_tasks": 2,
    "boundary_fuzz": 0.1,
    "noise_type": "sym",
    "noise_rate": 0.3,
    "memory_size": 40,
    "mem_epochs": 2,
    "test_size": 200,
    "jitter_count": 2,
    "dropout_count": 1,
    "trials": [0],
}


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return config_from_mapping(TINY)


@pytest.fixture
def default_config_path() -> Path:
    return REPO_ROOT / "configs" / "default.yaml"
