"""
Tests de métricas: F1 de adyacencia, F1-G y TEDS-Struct
"""

import unittest
from functools import lru_cache

import numpy as np

from geometry import CellSpan, GridLattice, QuadBox, TableStructure, quad_iou
from merge_codec import cell_polygons
from metrics import (HORIZONTAL, VERTICAL, EvalRecord, MetricScore, StructNode, adjacency_relations,
                     aggregate_records, cell_adjacency_f1, evaluate_sample, grid_f1,
                     structure_to_tree, teds_struct, tree_edit_distance)
from syngen import gen_layout
from tsr_errors import TSRError


def uniform_lattice(rows, cols, pitch=10.0):
    xs, ys = np.meshgrid(np.arange(cols + 1) * pitch, np.arange(rows + 1) * pitch)
    return GridLattice(np.stack([xs, ys], axis=2))


def with_polygons(ts, pitch=10.0):
    return cell_polygons(ts, uniform_lattice(ts.rows, ts.cols, pitch))


def optimal_matching_size(pred, gt, tau):
    """Emparejamiento bipartito máximo (caminos aumentantes) sobre pares con IoU >= tau"""
    edges = {i: [j for j in range(len(gt)) if quad_iou(pred[i], gt[j]) >= tau] for i in range(len(pred))}
    owner = {}

    def augment(i, seen):
        for j in edges[i]:
            if j in seen:
                continue
            seen.add(j)
            if j not in owner or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(1 for i in range(len(pred)) if augment(i, set()))


def as_tuple(node):
    return ((node.tag, node.rowspan, node.colspan), tuple(as_tuple(c) for c in node.children))


@lru_cache(maxsize=None)
def forest_distance(f, g):
    """Distancia de edición de bosques ordenados por recursión sobre la raíz más a la derecha"""
    if not f and not g:
        return 0
    if not f:
        label, children = g[-1]
        return forest_distance(f, g[:-1] + children) + 1
    if not g:
        label, children = f[-1]
        return forest_distance(f[:-1] + children, g) + 1
    (lv, cv), (lw, cw) = f[-1], g[-1]
    return min(
        forest_distance(f[:-1] + cv, g) + 1,
        forest_distance(f, g[:-1] + cw) + 1,
        forest_distance(cv, cw) + forest_distance(f[:-1], g[:-1]) + (0 if lv == lw else 1),
    )


def random_tree(rng, max_nodes=6):
    """Árbol aleatorio de etiquetas table/tr/td con spans, a lo sumo max_nodes nodos"""
    labels = [('table', 1, 1), ('tr', 1, 1), ('td', 1, 1), ('td', 2, 1), ('td', 1, 2)]
    nodes = [StructNode(*labels[rng.integers(0, len(labels))]) for _ in range(int(rng.integers(1, max_nodes + 1)))]
    for k in range(1, len(nodes)):
        nodes[int(rng.integers(0, k))].children.append(nodes[k])
    return nodes[0]


class TestAdjacencyRelations(unittest.TestCase):
    """Tests de relaciones de adyacencia"""

    def test_one_by_two(self):
        rel = adjacency_relations(TableStructure.singletons(1, 2))
        self.assertEqual(list(rel), [(0, 1, HORIZONTAL)])

    def test_two_by_two(self):
        rel = list(adjacency_relations(TableStructure.singletons(2, 2)))
        self.assertEqual(len(rel), 4)
        self.assertEqual(sum(1 for r in rel if r[2] == HORIZONTAL), 2)
        self.assertEqual(sum(1 for r in rel if r[2] == VERTICAL), 2)

    def test_full_span(self):
        self.assertEqual(len(adjacency_relations(TableStructure((2, 2), (CellSpan(0, 1, 0, 1),)))), 0)


class TestCellAdjacencyF1(unittest.TestCase):
    """Tests del F1 de adyacencia tras emparejar celdas"""

    def test_perfect(self):
        ts = with_polygons(gen_layout(1, 4, 5, 0.4))
        self.assertEqual(cell_adjacency_f1(ts, ts, 0.6).as_tuple(), (1.0, 1.0, 1.0))

    def test_missed_relation(self):
        """GT 1×3 (dos relaciones), predicción con solo las dos primeras celdas"""
        gt = with_polygons(TableStructure.singletons(1, 3))
        pred = with_polygons(TableStructure.singletons(1, 2))
        p, r, f1 = cell_adjacency_f1(pred, gt, 0.6).as_tuple()
        self.assertEqual((p, r), (1.0, 0.5))
        self.assertAlmostEqual(f1, 2.0 / 3.0)

    def test_both_empty(self):
        ts = with_polygons(TableStructure((1, 1), (CellSpan(0, 0, 0, 0),)))
        score = cell_adjacency_f1(ts, ts)
        self.assertTrue(score.both_empty)
        self.assertEqual(score.as_tuple(), (1.0, 1.0, 1.0))

    def test_requires_polygons(self):
        ts = TableStructure.singletons(1, 2)
        with self.assertRaises(TSRError):
            cell_adjacency_f1(ts, ts)


class TestGridF1(unittest.TestCase):
    """Tests del F1-G de detección de grids"""

    def test_identical(self):
        lattice = uniform_lattice(3, 4)
        self.assertEqual(grid_f1(lattice, lattice, 0.9).f1, 1.0)

    def test_empty_prediction(self):
        self.assertEqual(grid_f1(None, uniform_lattice(2, 2)).f1, 0.0)

    def test_half_shifted(self):
        gt = [q for row in uniform_lattice(2, 2).boxes for q in row]
        pred = [q if k % 2 == 0 else QuadBox.from_coords(np.array(q.to_coords()) + 1000.0)
                for k, q in enumerate(gt)]
        score = grid_f1(pred, gt, 0.9)
        self.assertEqual((score.tp, score.n_pred, score.n_gt), (2, 4, 4))
        self.assertAlmostEqual(score.f1, 0.5)

    def test_greedy_matches_optimal(self):
        """El emparejamiento voraz alcanza el óptimo en retículas de hasta 5×5"""
        rng = np.random.default_rng(3)
        for rows in range(1, 6):
            for cols in range(1, 6):
                gt = [q for row in uniform_lattice(rows, cols).boxes for q in row]
                corners = uniform_lattice(rows, cols).corners + rng.normal(0.0, 0.4, (rows + 1, cols + 1, 2))
                pred = [q for row in GridLattice(corners).boxes for q in row]
                for tau in (0.5, 0.9):
                    self.assertEqual(grid_f1(pred, gt, tau).tp, optimal_matching_size(pred, gt, tau))


class TestStructureTree(unittest.TestCase):
    """Tests del árbol de estructura y de TEDS-Struct"""

    def test_two_by_two(self):
        tree = structure_to_tree(TableStructure.singletons(2, 2))
        self.assertEqual(tree.bracket(), '{table{tr{td}{td}}{tr{td}{td}}}')

    def test_colspan(self):
        tree = structure_to_tree(TableStructure((1, 2), (CellSpan(0, 0, 0, 1),)))
        self.assertEqual(tree.bracket(), '{table{tr{td colspan=2}}}')

    def test_rowspan_leaves_empty_row(self):
        tree = structure_to_tree(TableStructure((2, 1), (CellSpan(0, 1, 0, 0),)))
        self.assertEqual(tree.bracket(), '{table{tr{td rowspan=2}}{tr}}')

    def test_identical(self):
        tree = structure_to_tree(gen_layout(2, 4, 4, 0.5))
        self.assertEqual(teds_struct(tree, tree), 1.0)

    def test_one_insertion(self):
        a = StructNode('table', children=[StructNode('tr', children=[StructNode('td')])])
        b = StructNode('table', children=[StructNode('tr', children=[StructNode('td'), StructNode('td')])])
        self.assertEqual(teds_struct(a, b), 0.75)

    def test_span_substitution(self):
        a = StructNode('table', children=[StructNode('tr', children=[StructNode('td', colspan=2)])])
        b = StructNode('table', children=[StructNode('tr', children=[StructNode('td')])])
        self.assertEqual(tree_edit_distance(a, b), 1)

    def test_matches_forest_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            a, b = random_tree(rng), random_tree(rng)
            expected = forest_distance((as_tuple(a),), (as_tuple(b),))
            self.assertEqual(tree_edit_distance(a, b), expected)
            self.assertEqual(teds_struct(a, b), teds_struct(b, a))
            self.assertGreaterEqual(teds_struct(a, b), 0.0)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            a, b, c = (random_tree(rng) for _ in range(3))
            self.assertLessEqual(tree_edit_distance(a, c), tree_edit_distance(a, b) + tree_edit_distance(b, c))


class TestAggregation(unittest.TestCase):
    """Tests de evaluación por muestra y agregado micro-promediado"""

    def test_micro_average_three_samples(self):
        gt = with_polygons(TableStructure.singletons(1, 3))
        preds = [gt, with_polygons(TableStructure.singletons(1, 2)), gt]
        gts = [gt, gt, with_polygons(TableStructure.singletons(2, 2))]
        records = []
        for k, (p, g) in enumerate(zip(preds, gts)):
            records.append(evaluate_sample(f's{k}', p, g, uniform_lattice(p.rows, p.cols),
                                           uniform_lattice(g.rows, g.cols), ('cells',),
                                           style='wired' if k < 2 else 'wireless'))
        manual = MetricScore()
        for r in records:
            manual = manual + r.cells
        agg = aggregate_records(records)
        self.assertEqual(agg['all']['samples'], 3)
        self.assertEqual(agg['all']['cells']['tp'], manual.tp)
        self.assertEqual(agg['all']['cells']['n_pred'], manual.n_pred)
        self.assertEqual(agg['all']['cells']['n_gt'], manual.n_gt)
        self.assertAlmostEqual(agg['all']['cells']['f1'], manual.f1)
        self.assertEqual(agg['wired']['samples'], 2)
        self.assertEqual(agg['wireless']['samples'], 1)

    def test_record_to_dict(self):
        ts = with_polygons(TableStructure.singletons(2, 2))
        rec = evaluate_sample('x', ts, ts, uniform_lattice(2, 2), uniform_lattice(2, 2))
        out = rec.to_dict()
        self.assertEqual(out['cells']['f1'], 1.0)
        self.assertEqual(out['grid']['f1'], 1.0)
        self.assertEqual(out['teds_struct'], 1.0)
        self.assertIsInstance(rec, EvalRecord)


if __name__ == '__main__':
    unittest.main(verbosity=2)
