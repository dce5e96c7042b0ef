import logging
from typing import Any, Dict

from fastapi import APIRouter, Body, HTTPException

from services.config import config_from_mapping
from services.errors import ConfigError
from services.harness import run_comparison, run_experiment
from services.report import result_document

logger = logging.getLogger(__name__)
router = APIRouter()


@router.post("/experiments")
def create_experiment(payload: Dict[str, Any] = Body(...)):
    """
    Run an experiment from a config mapping (same keys as the YAML file)
    and return the results document.
    Set "compare": true to run NTD and the reservoir baseline on the same streams.
    """
    payload = dict(payload)
    compare = bool(payload.pop("compare", False))

    try:
        config = config_from_mapping(payload)
    except ConfigError as e:
        logger.error(f"Rejected experiment config: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    try:
        results = run_comparison(config) if compare else [run_experiment(config)]
    except Exception as e:
        logger.exception(f"An error occurred while running the experiment: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Internal Server Error: {str(e)}")

    failed = [t.seed for r in results for t in r.failed]
    if failed:
        logger.warning(f"Experiment finished with failed seeds {failed}")
    return result_document(results)
