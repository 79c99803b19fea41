"""
Ejecución de extremo a extremo de las cabezas sobre un FeaturePack

características → P^row/P^col, δ → líneas → retícula → E', E → P^sg, P^a → bundle
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from geometry import Point
from heads import (FeatureMap, HeadWeights, grid_embed, init_head_weights, line_mean_feature,
                   merge_heads, offset_head, rowcol_attention, sample_proposal_features,
                   start_point_head)
from kor_decoder import (Axis, SeparationLine, apply_offsets, build_lattice,
                         detect_start_points, make_proposals, num_keypoints)
from merge_codec import actions_from_probs
from table_pipeline import PredictionBundle, half_resolution
from tsr_errors import TSRErrorHandler
from tsr_logger import tsr_logger

# Ganancia del canal de inicio plantado en el paquete de demostración
DEMO_START_GAIN = 10.0


@dataclass(frozen=True)
class FeaturePack:
    """Familia de mapas de características, pesos y metadatos"""
    f: FeatureMap
    row_sd: FeatureMap
    row_lr: FeatureMap
    col_sd: FeatureMap
    col_lr: FeatureMap
    weights: HeadWeights
    image_size: Tuple[int, int]
    stride: int = 32
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        w, h = self.image_size
        expected = self.expected_shapes(w, h, self.stride)
        for name, (eh, ew) in expected.items():
            fm = getattr(self, name)
            if fm.channels != self.weights.channels or (fm.height, fm.width) != (eh, ew):
                raise TSRErrorHandler.invalid_argument(
                    f"{name}: forma {fm.data.shape}, se esperaba ({self.weights.channels}, {eh}, {ew})",
                    field=name)

    @staticmethod
    def expected_shapes(width: int, height: int, stride: int) -> Dict[str, Tuple[int, int]]:
        """Resoluciones: F a (H/2, W/2); filas a (H/2, W/t); columnas a (H/t, W/2)"""
        h2, w2 = half_resolution(height), half_resolution(width)
        ht, wt = num_keypoints(height, stride), num_keypoints(width, stride)
        return {'f': (h2, w2), 'row_sd': (h2, wt), 'row_lr': (h2, wt),
                'col_sd': (ht, w2), 'col_lr': (ht, w2)}


def make_demo_pack(seed: int = 0, image_size: Tuple[int, int] = (256, 256), channels: int = 256,
                   grid_channels: int = 512, stride: int = 32, rows: int = 4, cols: int = 4,
                   pe_depth: int = 1) -> FeaturePack:
    """
    Paquete determinista: características y pesos pseudoaleatorios

    El canal 0 de F_sd lleva una señal de inicio plantada en filas/columnas
    equiespaciadas y la proyección de inicio solo lee ese canal, de modo que
    la retícula resultante es válida.
    """
    w, h = image_size
    rng = np.random.default_rng(seed)
    weights = init_head_weights(seed, channels, grid_channels, pe_depth=pe_depth)
    tensors = dict(weights.tensors)
    start_proj = np.zeros((2, channels))
    start_proj[0, 0] = -DEMO_START_GAIN
    start_proj[1, 0] = DEMO_START_GAIN
    tensors['start_proj.weight'] = start_proj
    weights = HeadWeights(tensors, channels, grid_channels, weights.pooled_size)

    shapes = FeaturePack.expected_shapes(w, h, stride)

    def noise(name: str) -> np.ndarray:
        eh, ew = shapes[name]
        # Escala pequeña: desplazamientos de pocos píxeles
        return 0.1 * rng.standard_normal((channels, eh, ew))

    row_starts = np.round(np.linspace(2, shapes['row_sd'][0] - 3, rows + 1)).astype(int)
    col_starts = np.round(np.linspace(2, shapes['col_sd'][1] - 3, cols + 1)).astype(int)
    maps = {name: noise(name) for name in shapes}
    maps['row_sd'][0] = -1.0
    maps['row_sd'][0, row_starts, :] = 1.0
    maps['col_sd'][0] = -1.0
    maps['col_sd'][0, :, col_starts] = 1.0
    return FeaturePack(
        FeatureMap(maps['f']), FeatureMap(maps['row_sd']), FeatureMap(maps['row_lr']),
        FeatureMap(maps['col_sd']), FeatureMap(maps['col_lr']), weights, (w, h), stride,
        {'seed': seed, 'row_starts': [2 * int(i) for i in row_starts],
         'col_starts': [2 * int(i) for i in col_starts]})


def _run_axis(fp: FeaturePack, axis: Axis, threshold: float) -> Tuple[np.ndarray, List[SeparationLine], np.ndarray]:
    """Rama de un eje: probabilidades de inicio, líneas y matriz de desplazamientos"""
    w, h = fp.image_size
    sd, lr = (fp.row_sd, fp.row_lr) if axis == Axis.ROW else (fp.col_sd, fp.col_lr)
    extent, cross = (w, h) if axis == Axis.ROW else (h, w)
    stage = f'split.{axis.value}'
    try:
        probs = start_point_head(sd, fp.weights, axis)
        starts = detect_start_points(probs, threshold)
        if not starts:
            raise TSRErrorHandler.no_separation_lines(axis.value)
        lines, offsets = [], []
        for coord in starts:
            start = Point(0.0, float(coord)) if axis == Axis.ROW else Point(float(coord), 0.0)
            props = make_proposals(start, axis, extent, fp.stride, cross_extent=cross)
            k = sample_proposal_features(lr, props)
            delta = offset_head(k, line_mean_feature(k), fp.weights, axis)
            lines.append(apply_offsets(props, delta))
            offsets.append(delta.deltas)
    except Exception as exc:
        raise TSRErrorHandler.wrap_stage(exc, stage)
    return probs.probs, lines, np.array(offsets)


def run_heads(fp: FeaturePack, threshold: float = 0.5, workers: int = 1,
              intermediates: Optional[Dict] = None) -> PredictionBundle:
    """
    Ejecuta todas las cabezas y arma el PredictionBundle

    Las ramas de filas y columnas pueden correr en paralelo (workers > 1);
    el resultado no depende de ello. Si se pasa un dict en intermediates se
    rellena con los tensores intermedios.
    """
    if workers > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            row_future = pool.submit(_run_axis, fp, Axis.ROW, threshold)
            col_future = pool.submit(_run_axis, fp, Axis.COL, threshold)
            row_probs, row_lines, row_off = row_future.result()
            col_probs, col_lines, col_off = col_future.result()
    else:
        row_probs, row_lines, row_off = _run_axis(fp, Axis.ROW, threshold)
        col_probs, col_lines, col_off = _run_axis(fp, Axis.COL, threshold)

    try:
        lattice = build_lattice(row_lines, col_lines)
    except Exception as exc:
        raise TSRErrorHandler.wrap_stage(exc, 'split.lattice')
    try:
        e_pre = grid_embed(fp.f, lattice, fp.weights, fp.image_size)
        e_post = rowcol_attention(e_pre, fp.weights)
        probs = merge_heads(e_post, fp.weights)
        actions = actions_from_probs(probs)
    except Exception as exc:
        raise TSRErrorHandler.wrap_stage(exc, 'merge')

    tsr_logger.log_stage('heads', rows=lattice.rows, cols=lattice.cols,
                         row_lines=len(row_lines), col_lines=len(col_lines))
    if intermediates is not None:
        intermediates.update({'lattice': lattice, 'grid_embedding_pre': e_pre,
                              'grid_embedding': e_post, 'action_probs': probs})
    return PredictionBundle(fp.image_size, fp.stride, row_probs, col_probs, row_off, col_off, actions)
