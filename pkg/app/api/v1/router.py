# file: app/api/v1/router.py
from fastapi import APIRouter
from app.api.v1.endpoints import experiments, presets

api_router = APIRouter()
api_router.include_router(presets.router, prefix="/presets", tags=["Presets"])
api_router.include_router(experiments.router, prefix="/experiments", tags=["Experiments"])
