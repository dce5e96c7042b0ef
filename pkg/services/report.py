"""
Results files.

A single experiment is written as ``{config, trials, aggregate}``.  When
several samplers ran on the same config, the file holds
``{experiments: [...], comparison: [...]}`` and the comparison table is
also written as CSV next to it.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

import orjson
import pandas as pd
from rich.console import Console
from rich.table import Table

from services.errors import ReportError
from services.harness import ExperimentResult
from services.metrics import TIMING_FIELDS

logger = logging.getLogger(__name__)

_DUMP_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS

_TABLE_METRICS = (
    "last_test_accuracy",
    "last_memory_clean_ratio",
    "group_gap",
    "wall_time.online_learning",
    "wall_time.episodic_memory_usage",
    "wall_time.overall",
)


def comparison_table(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    """One row per sampler, ``mean ± std`` split into two columns per metric."""
    rows = []
    for result in results:
        row: Dict[str, Any] = {"sampler": result.sampler, "trials": len(result.trials) - len(result.failed)}
        for name in _TABLE_METRICS:
            summary = result.aggregate.get(name)
            row[f"{name}.mean"] = summary.mean if summary else None
            row[f"{name}.std"] = summary.std if summary else None
        rows.append(row)
    return pd.DataFrame(rows)


def result_document(results: Sequence[ExperimentResult]) -> Dict[str, Any]:
    if not results:
        raise ReportError("nothing to report")
    if len(results) == 1:
        return results[0].model_dump(mode="json")
    return {
        "experiments": [r.model_dump(mode="json") for r in results],
        "comparison": comparison_table(results).to_dict(orient="records"),
    }


def summary(results: Sequence[ExperimentResult]) -> Dict[str, Any]:
    """Machine-readable aggregate per sampler."""
    return {
        r.sampler: {
            "aggregate": {name: s.model_dump() for name, s in r.aggregate.items()},
            "failed_seeds": [t.seed for t in r.failed],
        }
        for r in results
    }


def report(
    results: Union[ExperimentResult, Sequence[ExperimentResult]],
    path,
    stdout: Optional[TextIO] = None,
) -> Dict[str, Any]:
    """Write the results file (plus comparison CSV) and print the summary line."""
    stdout = stdout or sys.stdout
    if isinstance(results, ExperimentResult):
        results = [results]
    document = result_document(results)
    path = Path(path)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(orjson.dumps(document, option=_DUMP_OPTIONS))
        if len(results) > 1:
            comparison_table(results).to_csv(path.with_suffix(".comparison.csv"), index=False)
    except OSError as e:
        logger.error(f"Failed to write results to {path}: {e}")
        raise ReportError(f"cannot write results to {path}: {e}") from e

    logger.info(f"Wrote results for {len(results)} experiment(s) to {path}")
    line = summary(results)
    stdout.write(orjson.dumps(line).decode("utf-8") + "\n")
    return line


def load_results(path) -> List[ExperimentResult]:
    try:
        document = orjson.loads(Path(path).read_bytes())
    except (OSError, orjson.JSONDecodeError) as e:
        raise ReportError(f"cannot read results from {path}: {e}") from e
    documents = document["experiments"] if "experiments" in document else [document]
    return [ExperimentResult.model_validate(d) for d in documents]


def strip_timing(document: Any) -> Any:
    """Copy of a results document without run-to-run timing fields."""
    if isinstance(document, dict):
        return {
            k: strip_timing(v)
            for k, v in document.items()
            if k not in TIMING_FIELDS and not any(k.startswith(f"{t}.") for t in TIMING_FIELDS)
        }
    if isinstance(document, list):
        return [strip_timing(v) for v in document]
    return document


def render(results: Sequence[ExperimentResult], console: Optional[Console] = None) -> None:
    """Human-readable table on the console."""
    console = console or Console(stderr=True)
    table = Table(title="Episodic memory sampling")
    table.add_column("sampler")
    table.add_column("trials", justify="right")
    for name in _TABLE_METRICS:
        table.add_column(name, justify="right")
    for result in results:
        cells = [result.sampler, str(len(result.trials) - len(result.failed))]
        for name in _TABLE_METRICS:
            s = result.aggregate.get(name)
            cells.append(f"{s.mean:.4f} ± {s.std:.4f}" if s else "n/a")
        table.add_row(*cells)
    console.print(table)
