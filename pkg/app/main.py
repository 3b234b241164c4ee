# file: app/main.py
import logging
from contextlib import asynccontextmanager
from fastapi import FastAPI

from app.api.v1.router import api_router
from app.core.config import settings
from app.db.registry import initialize_registry
from app.services.experiment_service import ExperimentService

logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
log = logging.getLogger("dgdlab.api")


@asynccontextmanager
async def lifespan(app: FastAPI):
    """On startup, initialize the run registry and the experiment service."""
    log.info("Application startup...")
    initialize_registry()
    app.state.experiment_service = ExperimentService()
    yield
    log.info("Application shutdown...")


app = FastAPI(
    title="dgdlab",
    description="Decentralized gradient descent experiments: DGD and Prox-DGD runs with audited traces.",
    version="0.1.0",
    lifespan=lifespan,
)

app.include_router(api_router, prefix="/api/v1")


@app.get("/health", tags=["Health"])
def health_check():
    return {"status": "ok"}
