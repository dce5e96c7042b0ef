# main.py

import logging
import sys
from enum import Enum
from pathlib import Path
from typing import List, Optional

import orjson
import typer
from fastapi import FastAPI
from dotenv import load_dotenv

from api import experiment_routes
from services.config import Settings, load_config
from services.errors import NTDError
from services.harness import run_comparison, run_experiment
from services.report import render, report
from services.scoring import PolicyConfig

# Load environment variables from .env file
load_dotenv()

settings = Settings()

# Log to both the console and a file
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(settings.log_file),
        logging.StreamHandler(sys.stderr),
    ]
)

logger = logging.getLogger(__name__)


# Initialize the FastAPI app
app = FastAPI(
    title="NTD Episodic Memory API",
    description="Runs noisy-label episodic memory sampling experiments on synthetic streams",
    version="0.1.0"
)

app.include_router(experiment_routes.router)


@app.get("/")
async def root():
    """Health check endpoint"""
    return {"status": "online", "message": "NTD experiment API is running"}


# ---------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------
cli = typer.Typer(add_completion=False, help="Noisy Test Debiasing experiments on synthetic streams.")


class NoiseOption(str, Enum):
    sym = "sym"
    asym = "asym"


class SamplerOption(str, Enum):
    ntd = "ntd"
    reservoir = "reservoir"
    both = "both"


def _fail(exc: Exception, code: int = 1) -> None:
    typer.echo(orjson.dumps({"error": type(exc).__name__, "message": str(exc)}).decode())
    raise typer.Exit(code)


def _parse_seeds(seeds: Optional[str]) -> Optional[List[int]]:
    if seeds is None:
        return None
    try:
        return [int(s) for s in seeds.replace(" ", "").split(",") if s]
    except ValueError:
        raise typer.BadParameter(f"--seeds must be a comma-separated list of integers, got '{seeds}'")


@cli.command()
def run(
    config: Optional[Path] = typer.Option(None, "--config", help="YAML experiment config"),
    noise_type: Optional[NoiseOption] = typer.Option(None, "--noise-type"),
    noise_rate: Optional[float] = typer.Option(None, "--noise-rate"),
    memory_size: Optional[int] = typer.Option(None, "--memory-size"),
    sampler: Optional[SamplerOption] = typer.Option(None, "--sampler", help="ntd, reservoir or both (paired)"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="comma-separated, e.g. 0,1,2"),
    out: Optional[Path] = typer.Option(None, "--out", help="results file (JSON)"),
    mem_epochs: Optional[int] = typer.Option(None, "--mem-epochs"),
    tta: Optional[int] = typer.Option(None, "--tta", help="number of augmentation policies, identity included"),
    defer_memory_training: bool = typer.Option(
        False, "--defer-memory-training", help="memory-usage stage only after the last task"
    ),
):
    """Run an experiment and write the results file."""
    overrides = {
        "noise_type": noise_type.value if noise_type else None,
        "noise_rate": noise_rate,
        "memory_size": memory_size,
        "trials": _parse_seeds(seeds),
        "mem_epochs": mem_epochs,
        "output": out,
    }
    if sampler is not None and sampler is not SamplerOption.both:
        overrides["sampler"] = sampler.value
    if defer_memory_training:
        overrides["train_each_task"] = False

    if config is None and settings.default_config.exists():
        config = settings.default_config

    try:
        experiment = load_config(config, overrides)
        if tta is not None:
            experiment = experiment.model_copy(update={
                "tta": PolicyConfig.from_count(
                    tta,
                    jitter_scale=experiment.tta.jitter_scale,
                    dropout_rate=experiment.tta.dropout_rate,
                )
            })
    except (NTDError, ValueError) as e:
        logger.error(f"Invalid configuration: {e}")
        _fail(e)

    if sampler is SamplerOption.both:
        results = run_comparison(experiment)
    else:
        results = [run_experiment(experiment)]

    out_path = experiment.output or settings.results_dir / f"{'compare' if len(results) > 1 else experiment.sampler}.json"
    try:
        report(results, out_path)
    except NTDError as e:
        _fail(e)
    render(results)

    failed = [t.seed for r in results for t in r.failed]
    if failed:
        _fail(RuntimeError(f"trials failed for seeds {failed}"), code=2)


@cli.command()
def serve(
    host: str = typer.Option("0.0.0.0", "--host"),
    port: int = typer.Option(8443, "--port"),
):
    """Serve the experiment API."""
    import uvicorn

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    cli()
