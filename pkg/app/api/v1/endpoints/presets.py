# file: app/api/v1/endpoints/presets.py
from typing import List

from fastapi import APIRouter

from app.schemas.models import PresetInfo
from app.services.preset_service import list_presets

router = APIRouter()


@router.get("", response_model=List[PresetInfo])
async def get_presets() -> List[PresetInfo]:
    return list_presets()
