# file: app/worker.py
import asyncio
import logging
from typing import List, Optional, Sequence

from app.core.config import settings
from app.schemas.models import ExperimentSummary, RunConfig
from app.services.experiment_service import EXIT_INTERNAL, ExperimentService

log = logging.getLogger("dgdlab.worker")


async def run_experiment_in_thread(
    service: ExperimentService, config: RunConfig, out_dir: Optional[str] = None, strict: bool = False
) -> ExperimentSummary:
    """Runs one experiment off the event loop; runs share no mutable state."""
    try:
        summary, _ = await asyncio.to_thread(service.run, config, out_dir, strict)
        return summary
    except Exception as e:
        log.error(f"Worker: experiment '{config.name}' crashed: {e}", exc_info=True)
        return ExperimentSummary(name=config.name, exit_code=EXIT_INTERNAL, status="error", message=str(e))


async def run_experiments_concurrently(
    service: ExperimentService,
    configs: Sequence[RunConfig],
    jobs: Optional[int] = None,
    out_dir: Optional[str] = None,
    strict: bool = False,
) -> List[ExperimentSummary]:
    jobs = max(1, jobs or settings.DEFAULT_JOBS)
    gate = asyncio.Semaphore(jobs)
    log.info(f"Worker: running {len(configs)} experiment(s) with {jobs} job(s).")

    async def guarded(config: RunConfig) -> ExperimentSummary:
        async with gate:
            return await run_experiment_in_thread(service, config, out_dir, strict)

    return list(await asyncio.gather(*(guarded(c) for c in configs)))
