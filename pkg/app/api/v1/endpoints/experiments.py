# file: app/api/v1/endpoints/experiments.py
import logging
from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException, Query, Request

from app.core.errors import ConfigError
from app.db.registry import list_runs
from app.schemas.models import ExperimentSummary, RunConfig, RunRecord
from app.services.experiment_service import EXIT_CONFIG, EXIT_INTERNAL, ExperimentService
from app.services.preset_service import PRESETS, get_preset
from app.worker import run_experiment_in_thread

log = logging.getLogger("dgdlab.api")

router = APIRouter()


def get_experiment_service(req: Request) -> ExperimentService:
    return req.app.state.experiment_service


def _raise_for_summary(summary: ExperimentSummary) -> ExperimentSummary:
    # nonfinite and audit failures are results; rejected configs and crashes are not
    if summary.exit_code == EXIT_CONFIG:
        raise HTTPException(status_code=400, detail=summary.message)
    if summary.exit_code == EXIT_INTERNAL:
        raise HTTPException(status_code=500, detail=f"Experiment '{summary.name}' failed: {summary.message}")
    return summary


@router.post("/run", response_model=ExperimentSummary)
async def run_experiment(
    config: RunConfig,
    strict: bool = False,
    experiment_service: ExperimentService = Depends(get_experiment_service),
) -> ExperimentSummary:
    summary = await run_experiment_in_thread(experiment_service, config, strict=strict)
    return _raise_for_summary(summary)


@router.post("/presets/{name}", response_model=ExperimentSummary)
async def run_preset(
    name: str,
    iterations: Optional[int] = Query(default=None, ge=0),
    strict: bool = False,
    experiment_service: ExperimentService = Depends(get_experiment_service),
) -> ExperimentSummary:
    if name not in PRESETS:
        raise HTTPException(status_code=404, detail=f"Preset '{name}' not found.")
    try:
        config = get_preset(name, iterations)
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=str(e))
    summary = await run_experiment_in_thread(experiment_service, config, strict=strict)
    return _raise_for_summary(summary)


@router.get("/history", response_model=List[RunRecord])
async def get_history(limit: int = Query(default=50, ge=1, le=1000)) -> List[RunRecord]:
    return list_runs(limit)
