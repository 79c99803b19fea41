"""
Decodificación KOR (regresión de desplazamientos de keypoints)
Convierte probabilidades de punto de inicio y desplazamientos en líneas de
separación, y las intersecta en una retícula de grids
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry import GridLattice, Point
from tsr_errors import TSRError, TSRErrorHandler, TSRErrorType
from tsr_logger import tsr_logger


class Axis(str, Enum):
    ROW = "row"
    COL = "col"


@dataclass(frozen=True)
class StartProbVector:
    """Probabilidad de inicio de línea por fila (o columna) a media resolución"""
    axis: Axis
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0):
            raise TSRErrorHandler.invalid_argument(
                f"probabilidades de inicio ({self.axis.value}) fuera de [0, 1]")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, 'axis', Axis(self.axis))
        object.__setattr__(self, 'probs', p)

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class ProposalSet:
    """Propuestas de keypoints alineadas con el punto de inicio"""
    axis: Axis
    start: Point
    stride: int
    points: Tuple[Point, ...]
    extent: int
    cross_extent: Optional[int] = None

    @property
    def num_keypoints(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.points], dtype=np.float64)


@dataclass(frozen=True)
class OffsetVector:
    """Desplazamientos en píxeles (y para filas, x para columnas)"""
    axis: Axis
    deltas: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=np.float64).reshape(-1).copy()
        if not np.all(np.isfinite(d)):
            raise TSRErrorHandler.invalid_argument("desplazamientos no finitos")
        d.setflags(write=False)
        object.__setattr__(self, 'axis', Axis(self.axis))
        object.__setattr__(self, 'deltas', d)

    def __len__(self) -> int:
        return self.deltas.size


@dataclass(frozen=True)
class SeparationLine:
    """
    Polilínea de separación etiquetada por eje

    keypoints tiene forma (N_k, 2) en coordenadas (x, y). Para filas la x
    crece estrictamente; para columnas, la y. extent es la dimensión de la
    imagen a lo largo de la línea (W para filas, H para columnas): la
    polilínea se prolonga a valor constante hasta el borde.
    """
    axis: Axis
    start: Point
    keypoints: np.ndarray
    extent: int

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2).copy()
        if kp.shape[0] < 1:
            raise TSRErrorHandler.invalid_argument("una línea requiere al menos un keypoint")
        kp.setflags(write=False)
        object.__setattr__(self, 'axis', Axis(self.axis))
        object.__setattr__(self, 'keypoints', kp)
        object.__setattr__(self, 'extent', int(self.extent))

    @property
    def positions(self) -> np.ndarray:
        """Coordenada a lo largo de la línea (x para filas, y para columnas)"""
        return self.keypoints[:, 0] if self.axis == Axis.ROW else self.keypoints[:, 1]

    @property
    def values(self) -> np.ndarray:
        """Coordenada transversal (y para filas, x para columnas)"""
        return self.keypoints[:, 1] if self.axis == Axis.ROW else self.keypoints[:, 0]

    @property
    def start_coord(self) -> float:
        return self.start.y if self.axis == Axis.ROW else self.start.x

    def value_at(self, position) -> np.ndarray:
        """Interpolación lineal con prolongación constante en los extremos"""
        return np.interp(position, self.positions, self.values)

    @classmethod
    def straight(cls, axis: Axis, coord: float, extent: int, stride: int = 32) -> 'SeparationLine':
        axis = Axis(axis)
        n_k = num_keypoints(extent, stride)
        pos = np.arange(n_k, dtype=np.float64) * stride
        val = np.full(n_k, float(coord))
        kp = np.stack([pos, val], axis=1) if axis == Axis.ROW else np.stack([val, pos], axis=1)
        start = Point(0.0, float(coord)) if axis == Axis.ROW else Point(float(coord), 0.0)
        return cls(axis, start, kp, extent)


def num_keypoints(extent: int, stride: int) -> int:
    """N_k = ⌈extent / stride⌉"""
    if stride is None or stride < 1:
        raise TSRErrorHandler.invalid_argument(f"stride inválido: {stride}")
    if extent < 1:
        raise TSRErrorHandler.invalid_argument(f"extensión inválida: {extent}")
    return int(math.ceil(extent / stride))


def detect_start_points(p: StartProbVector, threshold: float = 0.5) -> List[int]:
    """
    NMS 1-D por tramos: binariza en θ, una salida por tramo máximo de índices
    consecutivos sobre el umbral, en el argmax del tramo (empates: índice menor).
    Devuelve coordenadas de imagen (2·índice) ordenadas.
    """
    if not 0.0 < threshold < 1.0:
        raise TSRErrorHandler.invalid_argument(f"umbral NMS fuera de (0, 1): {threshold}")
    probs = p.probs
    above = probs > threshold
    if not above.any():
        return []
    edges = np.diff(np.concatenate(([0], above.astype(np.int8), [0])))
    run_starts = np.flatnonzero(edges == 1)
    run_ends = np.flatnonzero(edges == -1)
    starts = []
    for lo, hi in zip(run_starts, run_ends):
        starts.append(2 * int(lo + np.argmax(probs[lo:hi])))
    return starts


def make_proposals(start: Point, axis: Axis, image_extent: int, stride: int,
                   cross_extent: int = None) -> ProposalSet:
    """
    Propuestas con la misma coordenada transversal que el punto de inicio

    cross_extent es el tamaño de la imagen en el eje transversal (alto para filas,
    ancho para columnas). Sin él apply_offsets solo recorta por debajo de 0.
    """
    axis = Axis(axis)
    n_k = num_keypoints(image_extent, stride)
    if axis == Axis.ROW:
        if start.x != 0:
            raise TSRErrorHandler.invalid_argument(
                f"el inicio de una línea de fila debe tener x = 0 (x = {start.x})")
        points = tuple(Point(float(j * stride), float(start.y)) for j in range(n_k))
    else:
        if start.y != 0:
            raise TSRErrorHandler.invalid_argument(
                f"el inicio de una línea de columna debe tener y = 0 (y = {start.y})")
        points = tuple(Point(float(start.x), float(j * stride)) for j in range(n_k))
    return ProposalSet(axis, start, int(stride), points, int(image_extent), cross_extent)


def apply_offsets(props: ProposalSet, delta: OffsetVector) -> SeparationLine:
    """Keypoint j = propuesta j + δ_j sobre el eje transversal, recortado a [0, cross_extent - 1]"""
    if len(delta) != props.num_keypoints:
        raise TSRErrorHandler.invalid_argument(
            f"longitud de desplazamientos {len(delta)} != N_k {props.num_keypoints}")
    kp = props.as_array()
    k = 1 if props.axis == Axis.ROW else 0
    values = kp[:, k] + delta.deltas
    if props.cross_extent is not None:
        values = np.clip(values, 0.0, float(props.cross_extent - 1))
    else:
        values = np.maximum(values, 0.0)
    kp[:, k] = values
    return SeparationLine(props.axis, props.start, kp, props.extent)


@dataclass
class LineReport:
    """Reporte de validación de un conjunto de líneas del mismo eje"""
    axis: Optional[str] = None
    crossings: List[Dict] = field(default_factory=list)
    ordering: List[Dict] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.crossings and not self.ordering

    def to_dict(self) -> Dict:
        return {'axis': self.axis, 'clean': self.clean,
                'crossings': self.crossings, 'ordering': self.ordering}


def _common_grid(lines: Sequence[SeparationLine]) -> Tuple[np.ndarray, np.ndarray]:
    """Remuestrea todas las líneas sobre la unión de sus posiciones (mismo trazo exacto)"""
    extent = max(l.extent for l in lines)
    grid = np.unique(np.concatenate(
        [l.positions for l in lines] + [np.array([0.0, float(extent - 1)])]))
    if all(l.positions.size == grid.size and np.array_equal(l.positions, grid) for l in lines):
        vals = np.stack([l.values for l in lines])
    else:
        vals = np.stack([l.value_at(grid) for l in lines])
    return grid, vals


def validate_lines(lines: Sequence[SeparationLine]) -> LineReport:
    """Reporta cruces entre polilíneas del mismo eje y violaciones de orden"""
    report = LineReport(axis=lines[0].axis.value if lines else None)
    if len(lines) < 2:
        return report
    for idx, l in enumerate(lines):
        if np.any(np.diff(l.positions) <= 0):
            report.ordering.append({'line': idx, 'reason': 'posiciones no crecientes'})
    grid, vals = _common_grid(lines)
    n = len(lines)
    # diffs[a, b, k] = valor de b menos valor de a en la posición k
    diffs = vals[None, :, :] - vals[:, None, :]
    all_pos = np.all(diffs > 0, axis=2)
    all_neg = np.all(diffs < 0, axis=2)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    for a, b in np.argwhere(upper & ~all_pos & ~all_neg):
        d = diffs[a, b]
        positive = d > 0
        # Cambio de signo o contacto: cruce
        bad = np.flatnonzero((positive != positive[0]) | (d == 0))
        k = int(bad[0]) if bad.size else 0
        kp_index = int(np.searchsorted(lines[a].positions, grid[k], side='left'))
        report.crossings.append({'lines': [int(a), int(b)],
                                 'keypoint': min(kp_index, lines[a].positions.size - 1),
                                 'position': float(grid[k])})
    for a in np.flatnonzero(np.diagonal(all_neg, offset=1)):
        report.ordering.append({'lines': [int(a), int(a) + 1], 'keypoint': 0,
                                'reason': 'línea siguiente no está estrictamente después'})
    if not report.clean:
        tsr_logger.log_validation(f'lines_{report.axis}', report.crossings + report.ordering)
    return report


def _slow_intersections(rx, ry, cy, cx) -> List[Tuple[float, float]]:
    """Intersección exacta segmento a segmento entre dos polilíneas (todas las parejas)"""
    p1 = np.stack([rx[:-1], ry[:-1]], axis=1)[:, None, :]
    p2 = np.stack([rx[1:], ry[1:]], axis=1)[:, None, :]
    q1 = np.stack([cx[:-1], cy[:-1]], axis=1)[None, :, :]
    q2 = np.stack([cx[1:], cy[1:]], axis=1)[None, :, :]
    r = p2 - p1
    s = q2 - q1
    denom = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q1 - p1
    with np.errstate(divide='ignore', invalid='ignore'):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / denom
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / denom
    tol = 1e-12
    ok = (np.abs(denom) > tol) & (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)
    idx = np.argwhere(ok)
    points = []
    for a, b in idx:
        px = p1[a, 0, 0] + t[a, b] * r[a, 0, 0]
        py = p1[a, 0, 1] + t[a, b] * r[a, 0, 1]
        points.append((float(px), float(py)))
    points.sort()
    unique = []
    for p in points:
        if not unique or abs(p[0] - unique[-1][0]) > 1e-9 or abs(p[1] - unique[-1][1]) > 1e-9:
            unique.append(p)
    return unique


def build_lattice(row_lines: Sequence[SeparationLine],
                  col_lines: Sequence[SeparationLine]) -> GridLattice:
    """
    Intersecta líneas de fila y columna en una retícula (M = filas-1, N = columnas-1)

    Camino rápido vectorizado: cuando el producto de pendientes máximas de una
    pareja es < 1 la intersección es única y se localiza por iteración de punto
    fijo más intersección exacta de los segmentos encontrados. El resto de
    parejas usa el barrido exacto de todos los segmentos.
    """
    if len(row_lines) < 2 or len(col_lines) < 2:
        raise TSRError(
            f"se requieren al menos 2 líneas por eje (filas={len(row_lines)}, columnas={len(col_lines)})",
            TSRErrorType.LATTICE, error_code='too_few_lines')
    if any(l.axis != Axis.ROW for l in row_lines) or any(l.axis != Axis.COL for l in col_lines):
        raise TSRErrorHandler.invalid_argument("ejes de línea incorrectos")
    for lines in (row_lines, col_lines):
        report = validate_lines(lines)
        if not report.clean:
            raise TSRError(
                f"líneas de {report.axis} inválidas: {len(report.crossings)} cruces, "
                f"{len(report.ordering)} violaciones de orden",
                TSRErrorType.LATTICE, error_code='invalid_lines', details=report.to_dict())

    xg, ry = _common_grid(row_lines)      # filas: y = r_i(x)
    yg, cx = _common_grid(col_lines)      # columnas: x = c_j(y)
    n_r, n_c = len(row_lines), len(col_lines)
    kx, ky = xg.size, yg.size

    def slopes(grid, vals):
        if grid.size < 2:
            return np.zeros(vals.shape[0])
        return np.max(np.abs(np.diff(vals, axis=1) / np.diff(grid)[None, :]), axis=1)

    unique = np.outer(slopes(xg, ry), slopes(yg, cx)) < 1.0
    rows_idx = np.arange(n_r)[:, None]
    cols_idx = np.arange(n_c)[None, :]

    x = np.broadcast_to(cx[:, 0][None, :], (n_r, n_c)).astype(np.float64)
    found = np.zeros((n_r, n_c), dtype=bool)
    out_x = np.zeros((n_r, n_c))
    out_y = np.zeros((n_r, n_c))
    tol = 1e-9

    if kx >= 2 and ky >= 2:
        for _ in range(12):
            s = np.clip(np.searchsorted(xg, x, side='right') - 1, 0, kx - 2)
            x0, x1 = xg[s], xg[s + 1]
            y0r, y1r = ry[rows_idx, s], ry[rows_idx, s + 1]
            b = (y1r - y0r) / (x1 - x0)
            y = y0r + b * (x - x0)
            q = np.clip(np.searchsorted(yg, y, side='right') - 1, 0, ky - 2)
            g0, g1 = yg[q], yg[q + 1]
            x0c, x1c = cx[cols_idx, q], cx[cols_idx, q + 1]
            d = (x1c - x0c) / (g1 - g0)
            # x = c + d (y - g0), y = a + b (x - x0)
            denom = 1.0 - d * b
            with np.errstate(divide='ignore', invalid='ignore'):
                xs = (x0c + d * (y0r - b * x0 - g0)) / denom
            ys = y0r + b * (xs - x0)
            ok = (unique & ~found & np.isfinite(xs)
                  & (xs >= x0 - tol) & (xs <= x1 + tol) & (ys >= g0 - tol) & (ys <= g1 + tol))
            out_x[ok] = xs[ok]
            out_y[ok] = ys[ok]
            found |= ok
            if found[unique].all():
                break
            x = np.where(np.isfinite(xs), np.clip(xs, xg[0], xg[-1]), x)

    warnings = []
    for i, j in np.argwhere(~found):
        pts = _slow_intersections(xg, ry[i], yg, cx[j])
        if not pts:
            raise TSRError(
                f"la línea de fila {i} y la línea de columna {j} no se intersectan dentro de la imagen",
                TSRErrorType.LATTICE, error_code='no_intersection', details={'row_line': int(i), 'col_line': int(j)})
        if len(pts) > 1:
            warnings.append(f"fila {i} / columna {j}: {len(pts)} intersecciones, se usa la primera en x")
        out_x[i, j], out_y[i, j] = pts[0]

    if warnings:
        tsr_logger.log_validation('lattice_intersections', [{'warning': w} for w in warnings])
    corners = np.stack([out_x, out_y], axis=2)
    return GridLattice(corners, tuple(row_lines), tuple(col_lines), tuple(warnings))


def decode_axis(probs: StartProbVector, offsets: np.ndarray, image_size: Tuple[int, int],
                stride: int, threshold: float = 0.5) -> Tuple[List[SeparationLine], List[str]]:
    """
    Decodifica todas las líneas de un eje: inicios → propuestas → desplazamientos

    Las filas de offsets se asocian a los inicios detectados en orden
    ascendente; sobrantes se ignoran y faltantes se tratan como cero.
    """
    w, h = image_size
    axis = probs.axis
    extent, cross = (w, h) if axis == Axis.ROW else (h, w)
    starts = detect_start_points(probs, threshold)
    if not starts:
        raise TSRErrorHandler.no_separation_lines(axis.value)
    n_k = num_keypoints(extent, stride)
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.size == 0:
        offsets = np.zeros((0, n_k))
    if offsets.ndim != 2 or offsets.shape[1] != n_k:
        raise TSRErrorHandler.invalid_argument(
            f"desplazamientos de {axis.value} con forma {offsets.shape}, se esperaban (*, {n_k})")
    issues = []
    if offsets.shape[0] != len(starts):
        issues.append(f"{axis.value}: {len(starts)} inicios detectados pero {offsets.shape[0]} filas de desplazamiento")
    lines = []
    for k, coord in enumerate(starts):
        start = Point(0.0, float(coord)) if axis == Axis.ROW else Point(float(coord), 0.0)
        props = make_proposals(start, axis, extent, stride, cross_extent=cross)
        delta = offsets[k] if k < offsets.shape[0] else np.zeros(props.num_keypoints)
        lines.append(apply_offsets(props, OffsetVector(axis, delta)))
    return lines, issues
