"""
Codec entre estructuras de tabla y mapas de acciones de fusión (S, L, U, X)

S: grid inicial de la celda (Stay)
L: se fusiona con el grid de la izquierda
U: se fusiona con el grid de arriba
X: se fusiona hacia arriba y hacia la izquierda
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from geometry import CellSpan, GridLattice, QuadBox, TableStructure
from heads import ACTIONS, ActionProbs
from tsr_errors import TSRErrorHandler
from tsr_logger import tsr_logger


@dataclass(frozen=True)
class MergeActionMap:
    """Mapa M×N sobre el alfabeto SLUX más el mapa booleano de grids iniciales"""
    actions: np.ndarray
    start_grid: np.ndarray = None

    def __post_init__(self):
        act = np.asarray(self.actions, dtype='<U1')
        if act.ndim != 2 or act.shape[0] < 1 or act.shape[1] < 1:
            raise TSRErrorHandler.invalid_argument(f"mapa de acciones con forma inválida {act.shape}")
        bad = ~np.isin(act, list(ACTIONS))
        if np.any(bad):
            i, j = map(int, np.argwhere(bad)[0])
            raise TSRErrorHandler.invalid_argument(
                f"acción desconocida '{act[i, j]}' en ({i}, {j})", position=[i, j])
        sg = act == 'S' if self.start_grid is None else np.asarray(self.start_grid, dtype=bool)
        if sg.shape != act.shape:
            raise TSRErrorHandler.invalid_argument(
                f"start_grid {sg.shape} no coincide con acciones {act.shape}")
        act = act.copy()
        sg = sg.copy()
        act.setflags(write=False)
        sg.setflags(write=False)
        object.__setattr__(self, 'actions', act)
        object.__setattr__(self, 'start_grid', sg)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.actions.shape

    def to_rows(self) -> List[str]:
        """Serialización de una cadena por fila, p. ej. ["SL", "UX"]"""
        return [''.join(row) for row in self.actions]

    @classmethod
    def from_rows(cls, rows: Sequence[str], start_grid=None) -> 'MergeActionMap':
        if not rows or len({len(r) for r in rows}) != 1:
            raise TSRErrorHandler.invalid_argument("las filas del mapa de acciones deben tener igual longitud")
        return cls(np.array([list(r) for r in rows], dtype='<U1'), start_grid)


@dataclass
class CodecReport:
    """Reporte de validez de decode_actions"""
    inconsistencies: List[Dict] = field(default_factory=list)
    repairs: List[Dict] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.inconsistencies and not self.repairs

    def to_dict(self) -> Dict:
        return {'clean': self.clean, 'inconsistencies': self.inconsistencies, 'repairs': self.repairs}


def encode_actions(ts: TableStructure) -> MergeActionMap:
    """Mapa de acciones de una estructura válida"""
    issues = ts.partition_issues()
    if issues:
        raise TSRErrorHandler.invalid_argument(f"partición inválida: {'; '.join(issues)}", issues=issues)
    act = np.full(ts.lattice_dims, 'X', dtype='<U1')
    for cell in ts.cells:
        r0, c0 = cell.row_start, cell.col_start
        act[r0, c0 + 1:cell.col_end + 1] = 'L'
        act[r0 + 1:cell.row_end + 1, c0] = 'U'
        act[r0, c0] = 'S'
    return MergeActionMap(act)


def _run_length(act: np.ndarray, r: int, c: int, dr: int, dc: int, symbol: str) -> int:
    m, n = act.shape
    k = 0
    while 0 <= r + dr * (k + 1) < m and 0 <= c + dc * (k + 1) < n and act[r + dr * (k + 1), c + dc * (k + 1)] == symbol:
        k += 1
    return k


def _rect_consistent(act: np.ndarray, consumed: np.ndarray, r: int, c: int, h: int, w: int) -> bool:
    """El rectángulo (r..r+h, c..c+w) es consistente si no hay grids consumidos y el interior es X"""
    if np.any(consumed[r:r + h + 1, c:c + w + 1]):
        return False
    return bool(np.all(act[r + 1:r + h + 1, c + 1:c + w + 1] == 'X'))


def decode_actions(m: MergeActionMap) -> Tuple[TableStructure, CodecReport]:
    """
    Reconstruye la estructura desde el mapa de acciones

    Recorrido fila a fila. Para cada S, el ancho es la racha de L a la
    derecha y el alto la racha de U hacia abajo. Si el rectángulo no es
    consistente se recorta: primero el ancho, luego el alto. Los grids que
    quedan sin celda al final se convierten en celdas unitarias (reparación).
    """
    act = m.actions
    rows, cols = act.shape
    consumed = np.zeros((rows, cols), dtype=bool)
    report = CodecReport()
    cells = []
    for r in range(rows):
        for c in range(cols):
            if act[r, c] != 'S' or consumed[r, c]:
                continue
            width = _run_length(act, r, c, 0, 1, 'L')
            height = _run_length(act, r, c, 1, 0, 'U')
            chosen = None
            for w in range(width, -1, -1):
                for h in range(height, -1, -1):
                    if _rect_consistent(act, consumed, r, c, h, w):
                        chosen = (h, w)
                        break
                if chosen is not None:
                    break
            h, w = chosen
            if (h, w) != (height, width):
                report.inconsistencies.append({
                    'grid': [r, c], 'declared': [height + 1, width + 1], 'emitted': [h + 1, w + 1]})
            consumed[r:r + h + 1, c:c + w + 1] = True
            cells.append(CellSpan(r, r + h, c, c + w))
    for r, c in np.argwhere(~consumed):
        r, c = int(r), int(c)
        report.repairs.append({'grid': [r, c], 'action': str(act[r, c])})
        cells.append(CellSpan(r, r, c, c))
    structure = TableStructure((rows, cols), tuple(cells))
    tsr_logger.log_validation('merge_decode_inconsistency', report.inconsistencies)
    tsr_logger.log_validation('merge_decode_repair', report.repairs)
    return structure, report


def actions_from_probs(p: ActionProbs) -> MergeActionMap:
    """Argmax por grid (empates: S > L > U > X); grids iniciales con P^sg > 0.5 estricto"""
    # np.argmax devuelve el primer máximo, que coincide con el orden SLUX
    idx = np.argmax(p.actions, axis=2)
    letters = np.array(list(ACTIONS), dtype='<U1')[idx]
    return MergeActionMap(letters, p.start_grid > 0.5)


def start_grid_disagreements(m: MergeActionMap) -> List[List[int]]:
    """Grids donde P^sg discrepa del mapa de acciones (solo informativo)"""
    diff = m.start_grid != (m.actions == 'S')
    return [[int(i), int(j)] for i, j in np.argwhere(diff)]


def cell_polygons(ts: TableStructure, lattice: GridLattice) -> TableStructure:
    """Asigna a cada celda el cuadrilátero por las esquinas externas de su rango en la retícula"""
    if tuple(ts.lattice_dims) != lattice.dims:
        raise TSRErrorHandler.invalid_argument(
            f"dimensiones de la estructura {ts.lattice_dims} != retícula {lattice.dims}")
    cells = []
    for cell in ts.cells:
        corners = (lattice.corner_point(cell.row_start, cell.col_start),
                   lattice.corner_point(cell.row_start, cell.col_end + 1),
                   lattice.corner_point(cell.row_end + 1, cell.col_end + 1),
                   lattice.corner_point(cell.row_end + 1, cell.col_start))
        cells.append(cell.with_polygon(QuadBox(corners)))
    return TableStructure(ts.lattice_dims, tuple(cells))


def encode_merge_maps(ts: TableStructure) -> np.ndarray:
    """
    Representación por mapas de fusión: para cada grid, un mapa M×N
    booleano con los grids de su misma celda. Forma (M, N, M, N).
    """
    issues = ts.partition_issues()
    if issues:
        raise TSRErrorHandler.invalid_argument(f"partición inválida: {'; '.join(issues)}", issues=issues)
    owner = ts.owner_grid()
    return owner[:, :, None, None] == owner[None, None, :, :]


def representation_footprint(rows: int, cols: int) -> Dict[str, int]:
    """Número de elementos del mapa de acciones frente a los mapas de fusión por grid"""
    if rows < 1 or cols < 1:
        raise TSRErrorHandler.invalid_argument(f"dimensiones inválidas ({rows}, {cols})")
    return {'action_map': rows * cols, 'merge_maps': (rows * cols) ** 2}
