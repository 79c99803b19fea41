"""
Pipeline split-and-merge sobre un PredictionBundle

split: probabilidades de inicio + desplazamientos → líneas → retícula
merge: mapa de acciones → estructura de celdas con polígonos
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from geometry import GridLattice, TableStructure
from heads import ACTIONS
from kor_decoder import (Axis, LineReport, SeparationLine, StartProbVector, build_lattice,
                         decode_axis, num_keypoints, validate_lines)
from losses import LossReport, loss_report
from merge_codec import (CodecReport, MergeActionMap, cell_polygons, decode_actions,
                         start_grid_disagreements)
from tsr_errors import TSRErrorHandler
from tsr_logger import tsr_logger


def half_resolution(extent: int) -> int:
    """Longitud del vector de inicio a media resolución"""
    return (int(extent) + 1) // 2


@dataclass(frozen=True)
class PredictionBundle:
    """Salidas (o objetivos) de todas las cabezas para una imagen"""
    image_size: Tuple[int, int]
    stride: int
    row_start_prob: np.ndarray
    col_start_prob: np.ndarray
    row_offsets: np.ndarray
    col_offsets: np.ndarray
    actions: MergeActionMap

    def __post_init__(self):
        w, h = (int(v) for v in self.image_size)
        if w < 1 or h < 1:
            raise TSRErrorHandler.invalid_argument(f"tamaño de imagen inválido {self.image_size}")
        object.__setattr__(self, 'image_size', (w, h))
        object.__setattr__(self, 'stride', int(self.stride))
        n_row, n_col = num_keypoints(w, self.stride), num_keypoints(h, self.stride)
        for name, expected_len in (('row_start_prob', half_resolution(h)), ('col_start_prob', half_resolution(w))):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            # Un vector vacío equivale a no detectar ningún inicio
            if arr.size not in (0, expected_len):
                raise TSRErrorHandler.invalid_argument(
                    f"{name}: longitud {arr.size}, se esperaba {expected_len}", field=name)
            object.__setattr__(self, name, arr)
        for name, n_k in (('row_offsets', n_row), ('col_offsets', n_col)):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size == 0:
                arr = np.zeros((0, n_k))
            if arr.ndim != 2 or arr.shape[1] != n_k:
                raise TSRErrorHandler.invalid_argument(
                    f"{name}: forma {arr.shape}, se esperaba (*, {n_k})", field=name)
            object.__setattr__(self, name, arr)

    @property
    def start_grid(self) -> np.ndarray:
        return self.actions.start_grid

    def row_probs(self) -> StartProbVector:
        return StartProbVector(Axis.ROW, self.row_start_prob)

    def col_probs(self) -> StartProbVector:
        return StartProbVector(Axis.COL, self.col_start_prob)


@dataclass
class DecodeResult:
    """Resultado de decode_bundle: retícula, estructura y reportes"""
    lattice: GridLattice
    structure: TableStructure
    line_reports: Dict[str, LineReport]
    line_issues: List[str]
    action_adjustments: List[str]
    codec: CodecReport
    disagreements: List[List[int]]
    timings: Dict[str, float] = field(default_factory=dict)

    def report(self) -> Dict:
        return {
            'lines': {axis: rep.to_dict() for axis, rep in self.line_reports.items()},
            'line_issues': self.line_issues,
            'lattice_warnings': list(self.lattice.warnings),
            'action_adjustments': self.action_adjustments,
            'codec': self.codec.to_dict(),
            'start_grid_disagreements': self.disagreements,
        }


def decode_split(bundle: PredictionBundle, threshold: float = 0.5
                 ) -> Tuple[GridLattice, Dict[str, LineReport], List[str]]:
    """Ruta KOR completa: inicios → propuestas → desplazamientos → retícula"""
    row_lines, row_issues = decode_axis(bundle.row_probs(), bundle.row_offsets,
                                        bundle.image_size, bundle.stride, threshold)
    col_lines, col_issues = decode_axis(bundle.col_probs(), bundle.col_offsets,
                                        bundle.image_size, bundle.stride, threshold)
    reports = {'row': validate_lines(row_lines), 'col': validate_lines(col_lines)}
    lattice = build_lattice(row_lines, col_lines)
    return lattice, reports, row_issues + col_issues


def _fit_actions(actions: MergeActionMap, dims: Tuple[int, int]) -> Tuple[MergeActionMap, List[str]]:
    """Recorta o rellena con S el mapa de acciones hasta las dimensiones de la retícula"""
    if actions.dims == tuple(dims):
        return actions, []
    m, n = dims
    act = np.full((m, n), 'S', dtype='<U1')
    sg = np.ones((m, n), dtype=bool)
    h, w = min(m, actions.dims[0]), min(n, actions.dims[1])
    act[:h, :w] = actions.actions[:h, :w]
    sg[:h, :w] = actions.start_grid[:h, :w]
    note = f"mapa de acciones {actions.dims[0]}×{actions.dims[1]} ajustado a la retícula {m}×{n}"
    return MergeActionMap(act, sg), [note]


def decode_bundle(bundle: PredictionBundle, threshold: float = 0.5) -> DecodeResult:
    """Decodifica un bundle completo (split y merge) con tiempos en microsegundos"""
    t0 = time.perf_counter_ns()
    lattice, reports, line_issues = decode_split(bundle, threshold)
    t1 = time.perf_counter_ns()
    actions, adjustments = _fit_actions(bundle.actions, lattice.dims)
    structure, codec = decode_actions(actions)
    structure = cell_polygons(structure, lattice)
    disagreements = start_grid_disagreements(actions)
    t2 = time.perf_counter_ns()
    timings = {'split_us': (t1 - t0) / 1000.0, 'merge_us': (t2 - t1) / 1000.0}

    tsr_logger.log_validation('line_issues', [{'issue': i} for i in line_issues])
    tsr_logger.log_validation('action_map_adjustment', [{'issue': i} for i in adjustments])
    tsr_logger.log_validation('start_grid_disagreement', [{'grid': g} for g in disagreements])
    tsr_logger.log_stage('split', timings['split_us'], rows=lattice.rows, cols=lattice.cols)
    tsr_logger.log_stage('merge', timings['merge_us'], cells=len(structure.cells))
    return DecodeResult(lattice, structure, reports, line_issues, adjustments, codec,
                        disagreements, timings)


def instance_mask_baseline(features: np.ndarray, lines: List[SeparationLine],
                           kernels: np.ndarray) -> List[np.ndarray]:
    """
    Simulación de la ruta por segmentación de instancias: un mapa denso H×W
    por línea (proyección de C canales) y argmax transversal por columna.
    Coste lineal en el número de líneas por el tamaño del mapa.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise TSRErrorHandler.invalid_argument(f"se esperaba un mapa C×H×W, recibido {features.shape}")
    c = features.shape[0]
    kernels = np.asarray(kernels, dtype=np.float64).reshape(-1, c)
    flat = features.reshape(c, -1)
    positions = []
    for k, line in enumerate(lines):
        mask = (kernels[k % kernels.shape[0]] @ flat).reshape(features.shape[1:])
        axis = 0 if line.axis == Axis.ROW else 1
        positions.append(np.argmax(mask, axis=axis))
    return positions


def bundle_targets(gt: PredictionBundle, threshold: float = 0.5) -> Dict[str, np.ndarray]:
    """Objetivos de entrenamiento de un bundle GT: ŷ binarios, δ̂, P̂^sg y P̂^a one-hot"""
    return {
        'row_start': (gt.row_start_prob > threshold).astype(np.float64),
        'col_start': (gt.col_start_prob > threshold).astype(np.float64),
        'row_offsets': gt.row_offsets,
        'col_offsets': gt.col_offsets,
        'start_grid': gt.start_grid.astype(np.float64),
        'actions': action_one_hot(gt.actions),
    }


def action_one_hot(actions: MergeActionMap) -> np.ndarray:
    """P̂^a one-hot M×N×4 en el orden S, L, U, X"""
    return np.stack([actions.actions == a for a in ACTIONS], axis=-1).astype(np.float64)


def bundle_loss_report(pred: PredictionBundle, gt: PredictionBundle, gamma: float = 2.0,
                       alpha: float = 0.25, offset_loss: str = 'abs',
                       action_probs: Optional[np.ndarray] = None) -> LossReport:
    """
    Los seis términos entre un bundle predicho y uno GT

    Sin action_probs, P^a se toma one-hot del mapa de acciones predicho.
    """
    predictions = {
        'row_start': pred.row_start_prob,
        'col_start': pred.col_start_prob,
        'row_offsets': pred.row_offsets,
        'col_offsets': pred.col_offsets,
        'start_grid': pred.start_grid.astype(np.float64),
        'actions': action_one_hot(pred.actions) if action_probs is None else np.asarray(action_probs),
    }
    return loss_report(predictions, bundle_targets(gt), gamma, alpha, offset_loss)
