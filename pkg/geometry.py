"""
Tipos geométricos y tabulares compartidos por el pipeline
Incluye aritmética de polígonos (área, IoU por recorte convexo) usada por
el constructor de la retícula y por las métricas
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np

from tsr_errors import TSRErrorHandler

if TYPE_CHECKING:
    from kor_decoder import SeparationLine

# Tolerancia absoluta para comparaciones de área / IoU
AREA_TOL = 1e-9


@dataclass(frozen=True)
class Point:
    """Punto en píxeles de imagen"""
    x: float
    y: float

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class QuadBox:
    """Cuadrilátero con esquinas en orden fijo TL, TR, BR, BL"""
    corners: Tuple[Point, Point, Point, Point]

    def __post_init__(self):
        if len(self.corners) != 4:
            raise TSRErrorHandler.invalid_argument(
                f"QuadBox requiere 4 esquinas, recibidas {len(self.corners)}")

    @classmethod
    def from_coords(cls, coords: Sequence[float]) -> 'QuadBox':
        """Construye desde 8 coordenadas [x_tl, y_tl, x_tr, y_tr, x_br, y_br, x_bl, y_bl]"""
        if len(coords) != 8:
            raise TSRErrorHandler.invalid_argument(
                f"Se esperaban 8 coordenadas, recibidas {len(coords)}")
        c = [float(v) for v in coords]
        return cls(tuple(Point(c[k], c[k + 1]) for k in range(0, 8, 2)))

    @classmethod
    def from_rect(cls, x0: float, y0: float, x1: float, y1: float) -> 'QuadBox':
        return cls((Point(x0, y0), Point(x1, y0), Point(x1, y1), Point(x0, y1)))

    def to_coords(self) -> List[float]:
        return [v for p in self.corners for v in (p.x, p.y)]

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.corners], dtype=np.float64)

    def bounds(self) -> Tuple[float, float, float, float]:
        """Caja envolvente alineada a los ejes (xmin, ymin, xmax, ymax)"""
        xs = [p.x for p in self.corners]
        ys = [p.y for p in self.corners]
        return min(xs), min(ys), max(xs), max(ys)

    @property
    def top_left(self) -> Point:
        return self.corners[0]

    @property
    def bottom_right(self) -> Point:
        return self.corners[2]


@dataclass(frozen=True)
class GridLattice:
    """
    Retícula M×N de cuadriláteros obtenida intersectando líneas de separación

    corners tiene forma (M+1, N+1, 2): corners[i, j] es la intersección de la
    línea de fila i con la línea de columna j.
    """
    corners: np.ndarray
    row_lines: Tuple['SeparationLine', ...] = ()
    col_lines: Tuple['SeparationLine', ...] = ()
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.asarray(self.corners, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
            raise TSRErrorHandler.invalid_argument(
                f"corners debe tener forma (M+1, N+1, 2) con M, N >= 1; recibido {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, 'corners', arr)
        object.__setattr__(self, 'row_lines', tuple(self.row_lines))
        object.__setattr__(self, 'col_lines', tuple(self.col_lines))
        object.__setattr__(self, 'warnings', tuple(self.warnings))

    @property
    def rows(self) -> int:
        return self.corners.shape[0] - 1

    @property
    def cols(self) -> int:
        return self.corners.shape[1] - 1

    @property
    def dims(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    def box(self, i: int, j: int) -> QuadBox:
        c = self.corners
        pts = (c[i, j], c[i, j + 1], c[i + 1, j + 1], c[i + 1, j])
        return QuadBox(tuple(Point(float(p[0]), float(p[1])) for p in pts))

    @property
    def boxes(self) -> List[List[QuadBox]]:
        return [[self.box(i, j) for j in range(self.cols)] for i in range(self.rows)]

    def box_array(self) -> np.ndarray:
        """Cajas como arreglo M×N×8 (orden TL, TR, BR, BL)"""
        c = self.corners
        return np.concatenate(
            [c[:-1, :-1], c[:-1, 1:], c[1:, 1:], c[1:, :-1]], axis=2)

    def corner_point(self, i: int, j: int) -> Point:
        return Point(float(self.corners[i, j, 0]), float(self.corners[i, j, 1]))


@dataclass(frozen=True)
class CellSpan:
    """Celda: rango inclusivo de filas/columnas de la retícula y su polígono"""
    row_start: int
    row_end: int
    col_start: int
    col_end: int
    polygon: Optional[QuadBox] = field(default=None, compare=False)

    @property
    def rowspan(self) -> int:
        return self.row_end - self.row_start + 1

    @property
    def colspan(self) -> int:
        return self.col_end - self.col_start + 1

    @property
    def size(self) -> int:
        return self.rowspan * self.colspan

    def key(self) -> Tuple[int, int, int, int]:
        return (self.row_start, self.col_start, self.row_end, self.col_end)

    def with_polygon(self, polygon: QuadBox) -> 'CellSpan':
        return CellSpan(self.row_start, self.row_end, self.col_start, self.col_end, polygon)


@dataclass(frozen=True)
class TableStructure:
    """Estructura de tabla: dimensiones de la retícula y lista de celdas (orden canónico)"""
    lattice_dims: Tuple[int, int]
    cells: Tuple[CellSpan, ...]

    def __post_init__(self):
        object.__setattr__(self, 'lattice_dims', (int(self.lattice_dims[0]), int(self.lattice_dims[1])))
        object.__setattr__(self, 'cells', tuple(sorted(self.cells, key=CellSpan.key)))

    @property
    def rows(self) -> int:
        return self.lattice_dims[0]

    @property
    def cols(self) -> int:
        return self.lattice_dims[1]

    def partition_issues(self) -> List[str]:
        """Lista de violaciones de la invariante de partición (vacía si es válida)"""
        m, n = self.lattice_dims
        issues = []
        if m < 1 or n < 1:
            return [f"dimensiones inválidas {self.lattice_dims}"]
        cover = np.zeros((m, n), dtype=np.int64)
        for k, cell in enumerate(self.cells):
            if not (0 <= cell.row_start <= cell.row_end < m and 0 <= cell.col_start <= cell.col_end < n):
                issues.append(f"celda {k} fuera de rango: {cell.key()}")
                continue
            cover[cell.row_start:cell.row_end + 1, cell.col_start:cell.col_end + 1] += 1
        if np.any(cover > 1):
            issues.append(f"{int(np.sum(cover > 1))} grids cubiertos por más de una celda")
        if np.any(cover == 0):
            issues.append(f"{int(np.sum(cover == 0))} grids sin celda")
        return issues

    def is_valid(self) -> bool:
        return not self.partition_issues()

    def owner_grid(self) -> np.ndarray:
        """Arreglo M×N con el índice de la celda dueña de cada grid"""
        owner = np.full(self.lattice_dims, -1, dtype=np.int64)
        for k, cell in enumerate(self.cells):
            owner[cell.row_start:cell.row_end + 1, cell.col_start:cell.col_end + 1] = k
        return owner

    @classmethod
    def singletons(cls, rows: int, cols: int) -> 'TableStructure':
        return cls((rows, cols), tuple(CellSpan(i, i, j, j) for i in range(rows) for j in range(cols)))


def _signed_area(points: np.ndarray) -> float:
    if len(points) < 3:
        return 0.0
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(q: QuadBox) -> float:
    """Área (fórmula del cordón) en valor absoluto; cuadriláteros degenerados devuelven 0"""
    return abs(_signed_area(q.as_array()))


def is_convex(points: np.ndarray) -> bool:
    """Convexidad estricta o con lados colineales; polígonos degenerados no son convexos"""
    n = len(points)
    if n < 3 or abs(_signed_area(points)) <= AREA_TOL:
        return False
    sign = 0
    for k in range(n):
        a, b, c = points[k], points[(k + 1) % n], points[(k + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) <= AREA_TOL:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def _ccw(points: np.ndarray) -> np.ndarray:
    return points if _signed_area(points) >= 0 else points[::-1].copy()


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Recorte de Sutherland-Hodgman del polígono subject contra el polígono convexo clip (ambos CCW)"""
    output = [tuple(p) for p in subject]
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            break
        inputs = output
        output = []
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def side(p):
            return ex * (p[1] - cp1[1]) - ey * (p[0] - cp1[0])

        s = inputs[-1]
        s_side = side(s)
        for e in inputs:
            e_side = side(e)
            if e_side >= 0:
                if s_side < 0:
                    output.append(_cross_point(s, e, s_side, e_side))
                output.append(e)
            elif s_side >= 0:
                output.append(_cross_point(s, e, s_side, e_side))
            s, s_side = e, e_side
        cp1 = cp2
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _cross_point(s, e, s_side: float, e_side: float) -> Tuple[float, float]:
    # s y e en lados opuestos de la arista: interpolación por distancias con signo
    t = s_side / (s_side - e_side)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


@dataclass(frozen=True)
class IoUResult:
    value: float
    fallback: bool = False


def _bbox_iou(a: QuadBox, b: QuadBox) -> float:
    ax0, ay0, ax1, ay1 = a.bounds()
    bx0, by0, bx1, by1 = b.bounds()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > AREA_TOL else 0.0


def _snap(v: float) -> float:
    if v < AREA_TOL:
        return 0.0
    if v > 1.0 - AREA_TOL:
        return 1.0
    return v


def quad_iou_detailed(a: QuadBox, b: QuadBox) -> IoUResult:
    """IoU con indicador de degradación a cajas alineadas (entradas no convexas)"""
    # Orden canónico de argumentos: resultado simétrico bit a bit
    if tuple(b.to_coords()) < tuple(a.to_coords()):
        a, b = b, a
    pa, pb = a.as_array(), b.as_array()
    area_a, area_b = abs(_signed_area(pa)), abs(_signed_area(pb))
    if area_a <= AREA_TOL and area_b <= AREA_TOL:
        return IoUResult(0.0)
    if not (is_convex(pa) or area_a <= AREA_TOL) or not (is_convex(pb) or area_b <= AREA_TOL):
        return IoUResult(_snap(_bbox_iou(a, b)), fallback=True)
    if area_a <= AREA_TOL or area_b <= AREA_TOL:
        return IoUResult(0.0)
    inter = abs(_signed_area(clip_convex(_ccw(pa), _ccw(pb))))
    union = area_a + area_b - inter
    if union <= AREA_TOL:
        return IoUResult(0.0)
    return IoUResult(_snap(min(1.0, max(0.0, inter / union))))


def quad_iou(a: QuadBox, b: QuadBox) -> float:
    """IoU entre dos cuadriláteros convexos (simétrico, en [0, 1])"""
    return quad_iou_detailed(a, b).value
