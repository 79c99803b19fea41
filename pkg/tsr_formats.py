"""
Formatos de intercambio del CLI

- JSON (pydantic) para bundles, estructuras, manifiestos y reportes
- Contenedor binario SEMF para mapas de características y pesos
- PGM binario (P5) para rásters, vía Pillow
"""

from __future__ import annotations

import json
import struct
from typing import Any, Dict, List, Optional

import numpy as np
from PIL import Image
from pydantic import BaseModel, ValidationError, field_validator

from geometry import CellSpan, GridLattice, QuadBox, TableStructure
from heads import ACTIONS, FeatureMap, HeadWeights
from heads_runner import FeaturePack
from merge_codec import MergeActionMap
from table_pipeline import PredictionBundle
from tsr_errors import TSRError, TSRErrorHandler, TSRErrorType

SEMF_MAGIC = b'SEMF'
SEMF_VERSION = 1


# ============================================================================
# JSON
# ============================================================================

def dumps(data: Any) -> str:
    """JSON determinista: claves ordenadas, floats con repr exacto"""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def write_json(path: str, data: Any):
    try:
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write(dumps(data))
    except OSError as exc:
        raise TSRError(f"no se puede escribir {path}: {exc}", TSRErrorType.IO,
                       details={'path': path})


def read_json(path: str) -> Any:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            return json.load(fh)
    except OSError as exc:
        raise TSRError(f"no se puede leer {path}: {exc}", TSRErrorType.IO, details={'path': path})
    except json.JSONDecodeError as exc:
        raise TSRError(f"{path}: JSON inválido ({exc})", TSRErrorType.SCHEMA,
                       error_code='schema', details={'path': path})


class BundleModel(BaseModel):
    """Esquema JSON del PredictionBundle"""
    image_size: List[int]
    stride: int
    row_start_prob: List[float]
    col_start_prob: List[float]
    row_offsets: List[List[float]]
    col_offsets: List[List[float]]
    actions: List[str]
    start_grid: List[List[int]]

    @field_validator('image_size')
    @classmethod
    def validate_image_size(cls, v):
        if len(v) != 2 or min(v) < 1:
            raise ValueError('image_size debe ser [W, H] positivos')
        return v

    @field_validator('stride')
    @classmethod
    def validate_stride(cls, v):
        if v < 1:
            raise ValueError('stride debe ser >= 1')
        return v

    @field_validator('row_start_prob', 'col_start_prob')
    @classmethod
    def validate_probs(cls, v):
        if any(not 0.0 <= p <= 1.0 for p in v):
            raise ValueError('probabilidades fuera de [0, 1]')
        return v

    @field_validator('row_offsets', 'col_offsets')
    @classmethod
    def validate_offsets(cls, v):
        if len({len(r) for r in v}) > 1:
            raise ValueError('filas de desplazamientos de distinta longitud')
        return v

    @field_validator('actions')
    @classmethod
    def validate_actions(cls, v):
        if not v or len({len(r) for r in v}) != 1 or not v[0]:
            raise ValueError('filas de acciones vacías o de distinta longitud')
        bad = set(''.join(v)) - set(ACTIONS)
        if bad:
            raise ValueError(f'acciones desconocidas: {sorted(bad)}')
        return v

    @field_validator('start_grid')
    @classmethod
    def validate_start_grid(cls, v):
        if any(x not in (0, 1) for row in v for x in row):
            raise ValueError('start_grid solo admite 0/1')
        return v

    def to_bundle(self) -> PredictionBundle:
        m, n = len(self.actions), len(self.actions[0])
        if len(self.start_grid) != m or any(len(r) != n for r in self.start_grid):
            raise TSRError(f"start_grid no coincide con actions ({m}×{n})", TSRErrorType.SCHEMA,
                           error_code='schema', details={'field': 'start_grid'})
        try:
            return PredictionBundle(
                tuple(self.image_size), self.stride,
                np.array(self.row_start_prob), np.array(self.col_start_prob),
                np.array(self.row_offsets), np.array(self.col_offsets),
                MergeActionMap.from_rows(self.actions, np.array(self.start_grid, dtype=bool)))
        except TSRError as exc:
            raise TSRError(exc.message, TSRErrorType.SCHEMA, error_code='schema', details=exc.details)

    @classmethod
    def from_bundle(cls, b: PredictionBundle) -> 'BundleModel':
        return cls(
            image_size=list(b.image_size), stride=b.stride,
            row_start_prob=b.row_start_prob.tolist(), col_start_prob=b.col_start_prob.tolist(),
            row_offsets=b.row_offsets.tolist(), col_offsets=b.col_offsets.tolist(),
            actions=b.actions.to_rows(), start_grid=b.start_grid.astype(int).tolist())


class CellModel(BaseModel):
    row_start: int
    row_end: int
    col_start: int
    col_end: int
    polygon: Optional[List[float]] = None

    @field_validator('polygon')
    @classmethod
    def validate_polygon(cls, v):
        if v is not None and len(v) != 8:
            raise ValueError('polygon requiere 8 coordenadas')
        return v


class StructureModel(BaseModel):
    """Esquema JSON de una estructura (GT o decodificada)"""
    lattice_dims: List[int]
    cells: List[CellModel]
    lattice: Optional[List[List[List[float]]]] = None
    style: str = 'unknown'
    report: Optional[Dict[str, Any]] = None

    @field_validator('lattice_dims')
    @classmethod
    def validate_dims(cls, v):
        if len(v) != 2 or min(v) < 1:
            raise ValueError('lattice_dims debe ser [M, N] positivos')
        return v

    def to_structure(self) -> TableStructure:
        cells = tuple(
            CellSpan(c.row_start, c.row_end, c.col_start, c.col_end,
                     QuadBox.from_coords(c.polygon) if c.polygon is not None else None)
            for c in self.cells)
        return TableStructure(tuple(self.lattice_dims), cells)

    def to_lattice(self) -> Optional[GridLattice]:
        if self.lattice is None:
            return None
        try:
            return GridLattice(np.array(self.lattice, dtype=np.float64))
        except TSRError as exc:
            raise TSRError(exc.message, TSRErrorType.SCHEMA, error_code='schema',
                           details={'field': 'lattice'})

    @classmethod
    def from_structure(cls, ts: TableStructure, lattice: GridLattice = None, style: str = 'unknown',
                       report: Dict = None) -> 'StructureModel':
        cells = [CellModel(row_start=c.row_start, row_end=c.row_end, col_start=c.col_start,
                           col_end=c.col_end,
                           polygon=c.polygon.to_coords() if c.polygon is not None else None)
                 for c in ts.cells]
        return cls(lattice_dims=list(ts.lattice_dims), cells=cells,
                   lattice=lattice.corners.tolist() if lattice is not None else None,
                   style=style, report=report)


def _parse(model_cls, data: Any, source: str = None):
    try:
        return model_cls.model_validate(data)
    except ValidationError as exc:
        raise TSRErrorHandler.parse_validation_error(exc, source)


def load_bundle(path: str) -> PredictionBundle:
    return _parse(BundleModel, read_json(path), path).to_bundle()


def save_bundle(path: str, bundle: PredictionBundle):
    write_json(path, BundleModel.from_bundle(bundle).model_dump())


def load_structure(path: str) -> StructureModel:
    return _parse(StructureModel, read_json(path), path)


def save_structure(path: str, ts: TableStructure, lattice: GridLattice = None,
                   style: str = 'unknown', report: Dict = None):
    write_json(path, StructureModel.from_structure(ts, lattice, style, report).model_dump())


# ============================================================================
# SEMF
# ============================================================================

def write_semf(path: str, tensors: Dict[str, np.ndarray]):
    """magic, versión y por tensor: nombre, rango, dims u64 LE, datos f32 LE"""
    chunks = [SEMF_MAGIC, struct.pack("<B", SEMF_VERSION)]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype='<f4')
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<I', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<I', arr.ndim))
        chunks.append(np.asarray(arr.shape, dtype='<u8').tobytes())
        chunks.append(np.ascontiguousarray(arr).tobytes())
    try:
        with open(path, 'wb') as fh:
            fh.write(b''.join(chunks))
    except OSError as exc:
        raise TSRError(f"no se puede escribir {path}: {exc}", TSRErrorType.IO, details={'path': path})


def read_semf(path: str) -> Dict[str, np.ndarray]:
    try:
        with open(path, 'rb') as fh:
            raw = fh.read()
    except OSError as exc:
        raise TSRError(f"no se puede leer {path}: {exc}", TSRErrorType.IO, details={'path': path})

    def fail(msg: str):
        return TSRError(f"{path}: {msg}", TSRErrorType.SCHEMA, error_code='semf', details={'path': path})

    if raw[:4] != SEMF_MAGIC:
        raise fail("magic SEMF ausente")
    if len(raw) < 5 or raw[4] != SEMF_VERSION:
        raise fail(f"versión no soportada: {raw[4] if len(raw) > 4 else None}")
    offset = 5
    tensors: Dict[str, np.ndarray] = {}
    try:
        while offset < len(raw):
            (name_len,) = struct.unpack_from('<I', raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<I', raw, offset)
            offset += 4
            dims = tuple(int(d) for d in np.frombuffer(raw, dtype='<u8', count=rank, offset=offset))
            offset += 8 * rank
            size = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(raw, dtype='<f4', count=size, offset=offset)
            offset += 4 * size
            tensors[name] = data.astype(np.float64).reshape(dims)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise fail(f"contenedor truncado o corrupto ({exc})")
    return tensors


def weights_to_tensors(w: HeadWeights, prefix: str = '') -> Dict[str, np.ndarray]:
    return {f'{prefix}{k}': v for k, v in w.tensors.items()}


def weights_from_tensors(tensors: Dict[str, np.ndarray], prefix: str = '') -> HeadWeights:
    picked = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    try:
        return HeadWeights.from_tensors(picked)
    except KeyError as exc:
        raise TSRError(f"peso ausente en el contenedor: {exc}", TSRErrorType.SCHEMA, error_code='semf')


FEATURE_NAMES = ('f', 'row_sd', 'row_lr', 'col_sd', 'col_lr')


def save_feature_pack(path: str, fp: FeaturePack):
    """Guarda un FeaturePack completo (características, pesos y metadatos) en SEMF"""
    tensors = {f'features.{name}': getattr(fp, name).data for name in FEATURE_NAMES}
    tensors['meta.image_size'] = np.array(fp.image_size, dtype=np.float64)
    tensors['meta.stride'] = np.array([fp.stride], dtype=np.float64)
    tensors.update(weights_to_tensors(fp.weights, 'weights.'))
    write_semf(path, tensors)


def load_feature_pack(path: str) -> FeaturePack:
    tensors = read_semf(path)
    missing = [n for n in [f'features.{k}' for k in FEATURE_NAMES] + ['meta.image_size', 'meta.stride']
               if n not in tensors]
    if missing:
        raise TSRError(f"{path}: faltan tensores {missing}", TSRErrorType.SCHEMA,
                       error_code='semf', details={'missing': missing})
    w, h = (int(v) for v in tensors['meta.image_size'])
    return FeaturePack(
        *(FeatureMap(tensors[f'features.{k}']) for k in FEATURE_NAMES),
        weights=weights_from_tensors(tensors, 'weights.'),
        image_size=(w, h), stride=int(tensors['meta.stride'][0]), metadata={'source': path})


# ============================================================================
# PGM
# ============================================================================

def write_pgm(path: str, raster: np.ndarray):
    """PGM binario (P5) de 8 bits"""
    try:
        Image.fromarray(np.asarray(raster, dtype=np.uint8), mode='L').save(path, format='PPM')
    except OSError as exc:
        raise TSRError(f"no se puede escribir {path}: {exc}", TSRErrorType.IO, details={'path': path})


def read_pgm(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.array(img.convert('L'), dtype=np.uint8)
    except OSError as exc:
        raise TSRError(f"no se puede leer {path}: {exc}", TSRErrorType.IO, details={'path': path})
