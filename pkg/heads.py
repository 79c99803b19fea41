"""
Cabezas de predicción (pasadas hacia delante deterministas en numpy)

Operan sobre mapas de características y pesos suministrados (aleatorios o
cargados de un contenedor SEMF), de modo que el pipeline completo corre sin
framework de entrenamiento.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from geometry import GridLattice
from kor_decoder import Axis, OffsetVector, ProposalSet, StartProbVector
from tsr_errors import TSRErrorHandler
from tsr_logger import tsr_logger

ACTIONS = "SLUX"


@dataclass(frozen=True)
class FeatureMap:
    """Tensor denso C × alto × ancho"""
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise TSRErrorHandler.invalid_argument(f"FeatureMap requiere 3 dimensiones, recibido {d.shape}")
        if not np.all(np.isfinite(d)):
            raise TSRErrorHandler.invalid_argument("FeatureMap con valores no finitos")
        object.__setattr__(self, 'data', d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


class HeadWeights:
    """Tensores con nombre de todas las cabezas, consistentes con C, C_g y P"""

    def __init__(self, tensors: Dict[str, np.ndarray], channels: int, grid_channels: int,
                 pooled_size: int = 3):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self.channels = int(channels)
        self.grid_channels = int(grid_channels)
        self.pooled_size = int(pooled_size)
        self._check_shapes()

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> 'HeadWeights':
        """Infiere C, C_g y P a partir de las formas (p. ej. al leer un contenedor SEMF)"""
        c = tensors['start_proj.weight'].shape[1]
        c_g, flat = tensors['grid_proj.weight'].shape
        p = int(round((flat // c) ** 0.5))
        return cls(tensors, c, c_g, p)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise TSRErrorHandler.invalid_argument(f"peso ausente: {name}")

    @property
    def pe_depth(self) -> int:
        return sum(1 for k in self.tensors if k.startswith('pe.') and k.endswith('.weight'))

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        c, cg, p = self.channels, self.grid_channels, self.pooled_size
        shapes = {
            'start_proj.weight': (2, c), 'start_proj.bias': (2,),
            'offset_conv.weight': (1, 2 * c, 3), 'offset_conv.bias': (1,),
            'grid_proj.weight': (cg, p * p * c), 'grid_proj.bias': (cg,),
            'sg_conv.weight': (cg, cg, 3, 3), 'sg_conv.bias': (cg,),
            'sg_cls.weight': (1, cg), 'sg_cls.bias': (1,),
            'action_cls.weight': (4, 2 * cg), 'action_cls.bias': (4,),
        }
        for axis in ('row', 'col'):
            for proj in ('q', 'k', 'v'):
                shapes[f'attn.{axis}.{proj}.weight'] = (cg, cg)
                shapes[f'attn.{axis}.{proj}.bias'] = (cg,)
        depth = max(1, self.pe_depth)
        for layer in range(depth):
            shapes[f'pe.{layer}.weight'] = (cg, 4 if layer == 0 else cg)
            shapes[f'pe.{layer}.bias'] = (cg,)
        return shapes

    def _check_shapes(self):
        for name, shape in self.expected_shapes().items():
            if name not in self.tensors:
                raise TSRErrorHandler.invalid_argument(f"peso ausente: {name}")
            if self.tensors[name].shape != shape:
                raise TSRErrorHandler.invalid_argument(
                    f"forma inválida para {name}: {self.tensors[name].shape} != {shape}")


def init_head_weights(seed: int, channels: int = 256, grid_channels: int = 512,
                      pooled_size: int = 3, pe_depth: int = 1) -> HeadWeights:
    """Inicialización determinista: normal con escala 1/√fan-in, sesgos a cero"""
    rng = np.random.default_rng(seed)
    c, cg, p = channels, grid_channels, pooled_size
    specs = [
        ('start_proj', (2, c), c),
        ('offset_conv', (1, 2 * c, 3), 2 * c * 3),
        ('grid_proj', (cg, p * p * c), p * p * c),
    ]
    for layer in range(pe_depth):
        fan_in = 4 if layer == 0 else cg
        specs.append((f'pe.{layer}', (cg, fan_in), fan_in))
    for axis in ('row', 'col'):
        for proj in ('q', 'k', 'v'):
            specs.append((f'attn.{axis}.{proj}', (cg, cg), cg))
    specs += [
        ('sg_conv', (cg, cg, 3, 3), cg * 9),
        ('sg_cls', (1, cg), cg),
        ('action_cls', (4, 2 * cg), 2 * cg),
    ]
    tensors = {}
    for name, shape, fan_in in specs:
        tensors[f'{name}.weight'] = rng.standard_normal(shape) / np.sqrt(fan_in)
        tensors[f'{name}.bias'] = np.zeros(shape[0])
    return HeadWeights(tensors, c, cg, p)


@dataclass(frozen=True)
class GridEmbedding:
    """Representación M×N×C_g de los grids (kind: pre, post o start)"""
    data: np.ndarray
    kind: str = 'pre'

    @property
    def dims(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]


@dataclass(frozen=True)
class ActionProbs:
    """P^sg (M×N) y P^a (M×N×4 sobre S, L, U, X)"""
    start_grid: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        sg = np.asarray(self.start_grid, dtype=np.float64)
        act = np.asarray(self.actions, dtype=np.float64)
        if act.ndim != 3 or act.shape[2] != 4 or sg.shape != act.shape[:2]:
            raise TSRErrorHandler.invalid_argument(
                f"ActionProbs con formas inconsistentes: {sg.shape} / {act.shape}")
        object.__setattr__(self, 'start_grid', sg)
        object.__setattr__(self, 'actions', act)


def _softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def start_point_head(f_sd: FeatureMap, w: HeadWeights, axis: Axis = Axis.ROW) -> StartProbVector:
    """Proyección C→2 por posición, promedio por fila (o columna) y softmax de 2 clases"""
    axis = Axis(axis)
    if f_sd.channels != w.channels:
        raise TSRErrorHandler.invalid_argument(
            f"canales de F_sd ({f_sd.channels}) != C ({w.channels})")
    # La proyección es lineal: proyectar el promedio equivale a promediar proyecciones
    pooled = f_sd.data.mean(axis=2) if axis == Axis.ROW else f_sd.data.mean(axis=1)
    logits = w['start_proj.weight'] @ pooled + w['start_proj.bias'][:, None]
    probs = _softmax(logits, axis=0)[1]
    return StartProbVector(axis, np.clip(probs, 0.0, 1.0))


def sample_proposal_features(f_lr: FeatureMap, props: ProposalSet) -> np.ndarray:
    """
    Características K' (C × N_k) de las propuestas

    Rama de filas: columna = j, fila = y/2 (lineal sobre el eje fraccional, con recorte).
    Rama de columnas: fila = j, columna = x/2.
    """
    pts = props.as_array()
    n_k = pts.shape[0]
    if props.axis == Axis.ROW:
        j = np.minimum(np.arange(n_k), f_lr.width - 1)
        pos = np.clip(pts[:, 1] / 2.0, 0.0, f_lr.height - 1)
    else:
        j = np.minimum(np.arange(n_k), f_lr.height - 1)
        pos = np.clip(pts[:, 0] / 2.0, 0.0, f_lr.width - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, (f_lr.height if props.axis == Axis.ROW else f_lr.width) - 1)
    frac = pos - lo
    if props.axis == Axis.ROW:
        return f_lr.data[:, lo, j] * (1.0 - frac) + f_lr.data[:, hi, j] * frac
    return f_lr.data[:, j, lo] * (1.0 - frac) + f_lr.data[:, j, hi] * frac


def line_mean_feature(k: np.ndarray) -> np.ndarray:
    """S: media de las características de las propuestas de una línea"""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[1] < 1:
        raise TSRErrorHandler.invalid_argument("K' vacío: se requiere al menos una propuesta")
    return k.mean(axis=1)


def offset_head(k: np.ndarray, s: np.ndarray, w: HeadWeights, axis: Axis = Axis.ROW) -> OffsetVector:
    """Concatena S a cada propuesta y aplica convolución 1×3 (relleno cero) → N_k desplazamientos"""
    k = np.asarray(k, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    if k.ndim != 2 or s.shape[0] != k.shape[0]:
        raise TSRErrorHandler.invalid_argument(f"formas inconsistentes K' {k.shape} / S {s.shape}")
    kernel = w['offset_conv.weight']
    if kernel.shape[1] != 2 * k.shape[0]:
        raise TSRErrorHandler.invalid_argument(
            f"el kernel espera {kernel.shape[1]} canales, K tiene {2 * k.shape[0]}")
    n_k = k.shape[1]
    full = np.concatenate([k, np.repeat(s[:, None], n_k, axis=1)], axis=0)
    padded = np.pad(full, ((0, 0), (1, 1)))
    windows = np.stack([padded[:, t:t + n_k] for t in range(3)], axis=-1)
    deltas = np.einsum('ct,cnt->n', kernel[0], windows) + w['offset_conv.bias'][0]
    return OffsetVector(axis, deltas)


def _bilinear(data: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Muestreo bilineal estilo RoIAlign: data (C, H, W), coordenadas de cualquier forma → (C, *forma)"""
    _, h, w = data.shape
    empty = (ys < -1.0) | (ys > h) | (xs < -1.0) | (xs > w)
    y = np.clip(ys, 0.0, h - 1)
    x = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ly, lx = y - y0, x - x0
    hy, hx = 1.0 - ly, 1.0 - lx
    out = (data[:, y0, x0] * (hy * hx) + data[:, y0, x1] * (hy * lx)
           + data[:, y1, x0] * (ly * hx) + data[:, y1, x1] * (ly * lx))
    return np.where(empty, 0.0, out)


def roi_align(f: FeatureMap, lattice: GridLattice, pooled_size: int = 3,
              spatial_scale: float = 0.5) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """RoIAlign sobre la caja envolvente de cada grid: devuelve (M, N, C, P, P) y grids degenerados"""
    boxes = lattice.box_array().reshape(lattice.rows, lattice.cols, 4, 2) * spatial_scale
    x0, x1 = boxes[..., 0].min(axis=2), boxes[..., 0].max(axis=2)
    y0, y1 = boxes[..., 1].min(axis=2), boxes[..., 1].max(axis=2)
    degenerate = ((x1 - x0) <= 0) | ((y1 - y0) <= 0)
    p = pooled_size
    centers = (np.arange(p) + 0.5) / p
    ys = y0[..., None] + (y1 - y0)[..., None] * centers          # (M, N, P)
    xs = x0[..., None] + (x1 - x0)[..., None] * centers
    yy = np.broadcast_to(ys[..., :, None], ys.shape + (p,))
    xx = np.broadcast_to(xs[..., None, :], xs.shape[:-1] + (p, p))
    pooled = _bilinear(f.data, yy, xx)                              # (C, M, N, P, P)
    pooled = np.moveaxis(pooled, 0, 2)                              # (M, N, C, P, P)
    pooled[degenerate] = 0.0
    return pooled, [tuple(map(int, ij)) for ij in np.argwhere(degenerate)]


def position_embedding(lattice: GridLattice, w: HeadWeights, image_size: Tuple[int, int]) -> np.ndarray:
    """PE a partir de las esquinas TL y BR normalizadas (afín, con capas ocultas ReLU si pe_depth > 1)"""
    width, height = image_size
    c = lattice.corners
    coords = np.stack([c[:-1, :-1, 0] / width, c[:-1, :-1, 1] / height,
                       c[1:, 1:, 0] / width, c[1:, 1:, 1] / height], axis=-1)
    h = coords
    depth = w.pe_depth
    for layer in range(depth):
        h = h @ w[f'pe.{layer}.weight'].T + w[f'pe.{layer}.bias']
        if layer < depth - 1:
            h = np.maximum(h, 0.0)
    return h


def grid_embed(f: FeatureMap, lattice: GridLattice, w: HeadWeights,
               image_size: Tuple[int, int] = None, spatial_scale: float = 0.5) -> GridEmbedding:
    """E' = proyección del RoIAlign de cada grid + PE de sus esquinas normalizadas"""
    if f.channels != w.channels:
        raise TSRErrorHandler.invalid_argument(f"canales de F ({f.channels}) != C ({w.channels})")
    if image_size is None:
        image_size = (int(round(f.width / spatial_scale)), int(round(f.height / spatial_scale)))
    pooled, degenerate = roi_align(f, lattice, w.pooled_size, spatial_scale)
    if degenerate:
        tsr_logger.log_validation('degenerate_grids', [{'grid': g} for g in degenerate])
    flat = pooled.reshape(lattice.rows, lattice.cols, -1)
    visual = flat @ w['grid_proj.weight'].T + w['grid_proj.bias']
    return GridEmbedding(visual + position_embedding(lattice, w, image_size), 'pre')


def _axis_attention(x: np.ndarray, w: HeadWeights, axis: str) -> np.ndarray:
    """Atención de una cabeza restringida a la última dimensión de grids: x (A, B, C)"""
    q = x @ w[f'attn.{axis}.q.weight'].T + w[f'attn.{axis}.q.bias']
    k = x @ w[f'attn.{axis}.k.weight'].T + w[f'attn.{axis}.k.bias']
    v = x @ w[f'attn.{axis}.v.weight'].T + w[f'attn.{axis}.v.bias']
    scores = np.einsum('abc,adc->abd', q, k) / np.sqrt(x.shape[-1])
    attn = _softmax(scores, axis=-1)
    return x + np.einsum('abd,adc->abc', attn, v)


def rowcol_attention(e: GridEmbedding, w: HeadWeights) -> GridEmbedding:
    """Atención por filas de la retícula (con residual) y luego por columnas (con residual)"""
    if e.data.ndim != 3 or e.data.shape[2] != w.grid_channels:
        raise TSRErrorHandler.invalid_argument(
            f"embedding con forma {e.data.shape}, se esperaban C_g={w.grid_channels} canales")
    rows = _axis_attention(e.data, w, 'row')
    cols = _axis_attention(np.transpose(rows, (1, 0, 2)), w, 'col')
    return GridEmbedding(np.transpose(cols, (1, 0, 2)), 'post')


def _conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Convolución 3×3 con relleno cero sobre la retícula: x (M, N, C) → (M, N, O)"""
    m, n, _ = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    patches = np.stack([np.stack([padded[u:u + m, v:v + n] for v in range(3)], axis=-1)
                        for u in range(3)], axis=-2)                # (M, N, C, 3, 3)
    return np.einsum('ocuv,mncuv->mno', weight, patches) + bias


def merge_heads(e: GridEmbedding, w: HeadWeights) -> ActionProbs:
    """E_s por convolución 3×3; P^sg logística; P^a softmax sobre [E_s, E]"""
    if e.data.ndim != 3 or e.data.shape[2] != w.grid_channels:
        raise TSRErrorHandler.invalid_argument(
            f"embedding con forma {e.data.shape}, se esperaban C_g={w.grid_channels} canales")
    e_s = _conv3x3(e.data, w['sg_conv.weight'], w['sg_conv.bias'])
    sg_logits = e_s @ w['sg_cls.weight'][0] + w['sg_cls.bias'][0]
    action_logits = np.concatenate([e_s, e.data], axis=2) @ w['action_cls.weight'].T + w['action_cls.bias']
    return ActionProbs(_sigmoid(sg_logits), _softmax(action_logits, axis=-1))
