"""
Configuración de ejecución del pipeline
Orden de precedencia: archivo .env < variables de entorno < argumentos del CLI
"""

import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError, field_validator

from tsr_errors import TSRErrorHandler

# Variable de entorno → campo de RunConfig
ENV_FIELDS = {
    'TSR_STRIDE': 'stride',
    'TSR_NMS_THRESHOLD': 'nms_threshold',
    'TSR_CELL_IOU': 'cell_iou',
    'TSR_GRID_IOU': 'grid_iou',
    'TSR_FOCAL_GAMMA': 'focal_gamma',
    'TSR_FOCAL_ALPHA': 'focal_alpha',
    'TSR_SEED': 'seed',
    'SEMV3_THREADS': 'workers',
}


class RunConfig(BaseModel):
    """Hiperparámetros de una ejecución; se serializa junto a cada salida"""
    stride: int = 32
    nms_threshold: float = 0.5
    cell_iou: float = 0.6
    grid_iou: float = 0.9
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    seed: int = 0
    workers: int = 1
    region_thickness: int = 6
    offset_loss: str = 'abs'
    pe_depth: int = 1

    @field_validator('stride', 'workers', 'region_thickness', 'pe_depth')
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError('debe ser >= 1')
        return v

    @field_validator('nms_threshold')
    @classmethod
    def validate_threshold(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError('el umbral NMS debe estar en (0, 1)')
        return v

    @field_validator('cell_iou', 'grid_iou', 'focal_alpha')
    @classmethod
    def validate_unit_interval(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError('debe estar en (0, 1]')
        return v

    @field_validator('focal_gamma')
    @classmethod
    def validate_gamma(cls, v):
        if v < 0:
            raise ValueError('gamma debe ser >= 0')
        return v

    @field_validator('seed')
    @classmethod
    def validate_seed(cls, v):
        if v < 0:
            raise ValueError('la semilla debe ser >= 0')
        return v

    @field_validator('offset_loss')
    @classmethod
    def validate_offset_loss(cls, v):
        if v not in ('abs', 'squared'):
            raise ValueError("offset_loss debe ser 'abs' o 'squared'")
        return v


def load_run_config(env_file: Optional[str] = None, **overrides: Any) -> RunConfig:
    """Construye la configuración desde .env, entorno y overrides explícitos (None se ignora)"""
    load_dotenv(env_file or os.getenv('TSR_ENV_FILE', '.env'), override=False)
    values: Dict[str, Any] = {}
    for env_name, field_name in ENV_FIELDS.items():
        raw = os.getenv(env_name)
        if raw not in (None, ''):
            values[field_name] = raw
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        raise TSRErrorHandler.parse_validation_error(exc, 'config')
