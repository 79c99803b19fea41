"""
Métricas de evaluación de estructura de tablas

- F1 de relaciones de adyacencia entre celdas (emparejamiento por IoU de polígonos)
- F1-G de detección de grids
- TEDS-Struct (distancia de edición de árboles Zhang–Shasha, solo estructura)

Nota de protocolo: las relaciones se definen sobre la adyacencia en la
retícula de los rectángulos de celda, y el emparejamiento usa IoU de
polígonos; no se reproducen las convenciones de cajas de contenido ni de
celdas vacías del protocolo cTDaR.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import zss

from geometry import GridLattice, QuadBox, TableStructure, quad_iou
from tsr_errors import TSRErrorHandler
from tsr_logger import tsr_logger

HORIZONTAL = 'horizontal'
VERTICAL = 'vertical'

PROTOCOL_NOTE = ("relaciones sobre adyacencia de rectángulos en la retícula; "
                 "emparejamiento de celdas por IoU de polígonos; sin cajas de contenido cTDaR")


@dataclass(frozen=True)
class RelationSet:
    """Relaciones (a, b, dirección) con a < b"""
    relations: FrozenSet[Tuple[int, int, str]]

    def __len__(self) -> int:
        return len(self.relations)

    def __contains__(self, item) -> bool:
        return item in self.relations

    def __iter__(self):
        return iter(sorted(self.relations))


@dataclass(frozen=True)
class MetricScore:
    """Conteos de una métrica de detección; la suma es asociativa (micro-promedio)"""
    tp: int = 0
    n_pred: int = 0
    n_gt: int = 0

    def __add__(self, other: 'MetricScore') -> 'MetricScore':
        return MetricScore(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gt + other.n_gt)

    @property
    def both_empty(self) -> bool:
        return self.n_pred == 0 and self.n_gt == 0

    @property
    def precision(self) -> float:
        if self.n_pred:
            return self.tp / self.n_pred
        return 1.0 if self.n_gt == 0 else 0.0

    @property
    def recall(self) -> float:
        if self.n_gt:
            return self.tp / self.n_gt
        return 1.0 if self.n_pred == 0 else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)

    def to_dict(self) -> Dict:
        return {'tp': self.tp, 'n_pred': self.n_pred, 'n_gt': self.n_gt,
                'precision': self.precision, 'recall': self.recall, 'f1': self.f1,
                'both_empty': self.both_empty}


def adjacency_relations(ts: TableStructure) -> RelationSet:
    """Pares de celdas que comparten un borde de longitud positiva en la retícula"""
    issues = ts.partition_issues()
    if issues:
        raise TSRErrorHandler.invalid_argument(f"partición inválida: {'; '.join(issues)}", issues=issues)
    owner = ts.owner_grid()
    relations = set()
    for direction, a, b in ((HORIZONTAL, owner[:, :-1], owner[:, 1:]),
                            (VERTICAL, owner[:-1, :], owner[1:, :])):
        differ = a != b
        for u, v in zip(a[differ].tolist(), b[differ].tolist()):
            relations.add((min(u, v), max(u, v), direction))
    return RelationSet(frozenset(relations))


def _bounds_array(quads: Sequence[QuadBox]) -> np.ndarray:
    if not quads:
        return np.zeros((0, 4))
    return np.array([q.bounds() for q in quads], dtype=np.float64)


def greedy_match(pred: Sequence[QuadBox], gt: Sequence[QuadBox], tau: float) -> Dict[int, int]:
    """Emparejamiento uno a uno por IoU descendente aceptando IoU >= tau"""
    if not 0.0 < tau <= 1.0:
        raise TSRErrorHandler.invalid_argument(f"umbral IoU fuera de (0, 1]: {tau}")
    if not pred or not gt:
        return {}
    bp, bg = _bounds_array(pred), _bounds_array(gt)
    # Poda por cajas envolventes antes de recortar polígonos
    overlap = ((bp[:, None, 0] < bg[None, :, 2]) & (bg[None, :, 0] < bp[:, None, 2])
               & (bp[:, None, 1] < bg[None, :, 3]) & (bg[None, :, 1] < bp[:, None, 3]))
    candidates = []
    for i, j in np.argwhere(overlap):
        iou = quad_iou(pred[i], gt[j])
        if iou >= tau:
            candidates.append((-iou, int(i), int(j)))
    candidates.sort()
    matched_pred, matched_gt = {}, set()
    for _, i, j in candidates:
        if i not in matched_pred and j not in matched_gt:
            matched_pred[i] = j
            matched_gt.add(j)
    return matched_pred


def _cell_quads(ts: TableStructure) -> List[QuadBox]:
    quads = [c.polygon for c in ts.cells]
    if any(q is None for q in quads):
        raise TSRErrorHandler.invalid_argument("todas las celdas requieren polígono (ver cell_polygons)")
    return quads


def cell_adjacency_f1(pred: TableStructure, gt: TableStructure, tau: float = 0.6) -> MetricScore:
    """F1 de relaciones de adyacencia tras emparejar celdas por IoU"""
    pred_rel = adjacency_relations(pred)
    gt_rel = adjacency_relations(gt)
    match = greedy_match(_cell_quads(pred), _cell_quads(gt), tau)
    tp = 0
    for a, b, direction in pred_rel:
        if a in match and b in match:
            ga, gb = match[a], match[b]
            if (min(ga, gb), max(ga, gb), direction) in gt_rel:
                tp += 1
    score = MetricScore(tp, len(pred_rel), len(gt_rel))
    if score.both_empty:
        tsr_logger.log_validation('metric_both_empty', [{'metric': 'cells'}])
    return score


def _lattice_quads(lattice: Union[GridLattice, Sequence[QuadBox], None]) -> List[QuadBox]:
    if lattice is None:
        return []
    if isinstance(lattice, GridLattice):
        return [q for row in lattice.boxes for q in row]
    return list(lattice)


def grid_f1(pred: Union[GridLattice, Sequence[QuadBox], None],
            gt: Union[GridLattice, Sequence[QuadBox], None], tau: float = 0.9) -> MetricScore:
    """F1-G: detección de grids con IoU >= tau"""
    pq, gq = _lattice_quads(pred), _lattice_quads(gt)
    match = greedy_match(pq, gq, tau)
    return MetricScore(len(match), len(pq), len(gq))


@dataclass
class StructNode:
    """Nodo del árbol de estructura: table → tr → td"""
    tag: str
    rowspan: int = 1
    colspan: int = 1
    children: List['StructNode'] = field(default_factory=list)

    @staticmethod
    def get_children(node: 'StructNode') -> List['StructNode']:
        return node.children

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def label(self) -> str:
        attrs = ''
        if self.rowspan != 1:
            attrs += f' rowspan={self.rowspan}'
        if self.colspan != 1:
            attrs += f' colspan={self.colspan}'
        return f'{self.tag}{attrs}'

    def bracket(self) -> str:
        return '{' + self.label() + ''.join(c.bracket() for c in self.children) + '}'


def structure_to_tree(ts: TableStructure) -> StructNode:
    """Un tr por fila de la retícula; un td por celda que empieza en esa fila"""
    issues = ts.partition_issues()
    if issues:
        raise TSRErrorHandler.invalid_argument(f"partición inválida: {'; '.join(issues)}", issues=issues)
    rows = [StructNode('tr') for _ in range(ts.rows)]
    for cell in sorted(ts.cells, key=lambda c: (c.row_start, c.col_start)):
        rows[cell.row_start].children.append(StructNode('td', cell.rowspan, cell.colspan))
    return StructNode('table', children=rows)


def _update_cost(a: StructNode, b: StructNode) -> int:
    return 0 if (a.tag, a.rowspan, a.colspan) == (b.tag, b.rowspan, b.colspan) else 1


def tree_edit_distance(a: StructNode, b: StructNode) -> int:
    return int(zss.distance(a, b, StructNode.get_children,
                            insert_cost=lambda node: 1, remove_cost=lambda node: 1,
                            update_cost=_update_cost))


def teds_struct(a: StructNode, b: StructNode) -> float:
    """1 - TED(a, b) / max(|a|, |b|)"""
    n = max(a.size(), b.size())
    if n == 0:
        return 1.0
    return 1.0 - tree_edit_distance(a, b) / n


@dataclass
class EvalRecord:
    """Resultado de evaluación de una muestra"""
    sample_id: str
    style: str = 'unknown'
    cells: Optional[MetricScore] = None
    grid: Optional[MetricScore] = None
    teds: Optional[float] = None

    def to_dict(self) -> Dict:
        out = {'sample_id': self.sample_id, 'style': self.style}
        if self.cells is not None:
            out['cells'] = self.cells.to_dict()
        if self.grid is not None:
            out['grid'] = self.grid.to_dict()
        if self.teds is not None:
            out['teds_struct'] = self.teds
        return out


def evaluate_sample(sample_id: str, pred: TableStructure, gt: TableStructure,
                    pred_lattice: Optional[GridLattice], gt_lattice: Optional[GridLattice],
                    metrics: Iterable[str] = ('cells', 'grid', 'teds'), cell_iou: float = 0.6,
                    grid_iou: float = 0.9, style: str = 'unknown') -> EvalRecord:
    metrics = set(metrics)
    record = EvalRecord(sample_id, style)
    if 'cells' in metrics:
        record.cells = cell_adjacency_f1(pred, gt, cell_iou)
    if 'grid' in metrics:
        record.grid = grid_f1(pred_lattice, gt_lattice, grid_iou)
    if 'teds' in metrics:
        record.teds = teds_struct(structure_to_tree(pred), structure_to_tree(gt))
    return record


def aggregate_records(records: Sequence[EvalRecord]) -> Dict[str, Dict]:
    """Agregado global y por estilo (wired / wireless): micro-promedio de conteos, media de TEDS"""
    groups: Dict[str, List[EvalRecord]] = {'all': list(records)}
    for rec in records:
        groups.setdefault(rec.style, []).append(rec)
    out = {}
    for name, recs in groups.items():
        entry = {'samples': len(recs)}
        cells = [r.cells for r in recs if r.cells is not None]
        grids = [r.grid for r in recs if r.grid is not None]
        teds = [r.teds for r in recs if r.teds is not None]
        if cells:
            entry['cells'] = sum(cells, MetricScore()).to_dict()
        if grids:
            entry['grid'] = sum(grids, MetricScore()).to_dict()
        if teds:
            entry['teds_struct'] = float(np.mean(teds))
        out[name] = entry
    return out
