"""
Tests de tipos geométricos: área, IoU de cuadriláteros y partición de estructuras
"""

import os
import unittest

import numpy as np

from geometry import (CellSpan, GridLattice, QuadBox, TableStructure, clip_convex, is_convex,
                      polygon_area, quad_iou, quad_iou_detailed)
from tsr_errors import TSRError

FULL = os.getenv('TSR_FULL_ACCEPTANCE') == '1'


def random_convex_quad(rng):
    """Cuatro puntos ordenados por ángulo sobre una elipse (convexo, CCW)"""
    cx, cy = rng.uniform(0.3, 0.7, 2)
    rx, ry = rng.uniform(0.12, 0.28, 2)
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, 4))
    pts = [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in angles]
    return QuadBox.from_coords([v for p in pts for v in p])


def inside_convex(q, xs, ys):
    """Máscara de puntos dentro de un cuadrilátero convexo (cualquier orientación)"""
    pts = q.as_array()
    sides = []
    for k in range(4):
        a, b = pts[k], pts[(k + 1) % 4]
        sides.append((b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0]))
    sides = np.stack(sides)
    return np.all(sides >= 0, axis=0) | np.all(sides <= 0, axis=0)


class TestPolygonArea(unittest.TestCase):
    """Tests del área por fórmula del cordón"""

    def test_unit_square(self):
        """Cuadrado unitario → 1.0"""
        self.assertEqual(polygon_area(QuadBox.from_rect(0, 0, 1, 1)), 1.0)

    def test_collinear_corners(self):
        """Esquinas colineales → 0.0"""
        q = QuadBox.from_coords([0, 0, 1, 1, 2, 2, 3, 3])
        self.assertEqual(polygon_area(q), 0.0)

    def test_scaled_square(self):
        """Cuadrado escalado por 3 → 9.0"""
        self.assertAlmostEqual(polygon_area(QuadBox.from_rect(0, 0, 3, 3)), 9.0)

    def test_from_coords_requires_eight_values(self):
        with self.assertRaises(TSRError):
            QuadBox.from_coords([0, 0, 1, 1])


class TestQuadIoU(unittest.TestCase):
    """Tests de IoU por recorte convexo"""

    def test_identical(self):
        q = QuadBox.from_rect(0, 0, 1, 1)
        self.assertEqual(quad_iou(q, q), 1.0)

    def test_disjoint(self):
        self.assertEqual(quad_iou(QuadBox.from_rect(0, 0, 1, 1), QuadBox.from_rect(2, 2, 3, 3)), 0.0)

    def test_half_shift(self):
        """Desplazamiento de 0.5: intersección 0.5, unión 1.5"""
        iou = quad_iou(QuadBox.from_rect(0, 0, 1, 1), QuadBox.from_rect(0.5, 0, 1.5, 1))
        self.assertAlmostEqual(iou, 1.0 / 3.0, places=12)

    def test_both_degenerate(self):
        q = QuadBox.from_coords([0, 0, 1, 1, 2, 2, 3, 3])
        self.assertEqual(quad_iou(q, q), 0.0)

    def test_symmetric_bitwise(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = random_convex_quad(rng), random_convex_quad(rng)
            self.assertEqual(quad_iou(a, b), quad_iou(b, a))

    def test_non_convex_falls_back_to_boxes(self):
        """Un cuadrilátero no convexo se evalúa con cajas envolventes"""
        dart = QuadBox.from_coords([0, 0, 2, 1, 0, 2, 1, 1])
        result = quad_iou_detailed(dart, QuadBox.from_rect(0, 0, 2, 2))
        self.assertTrue(result.fallback)
        self.assertAlmostEqual(result.value, 1.0)

    def test_against_dense_sampling(self):
        """IoU a 1e-3 de una estimación por muestreo denso"""
        rng = np.random.default_rng(11)
        n = 2000
        grid = (np.arange(n) + 0.5) / n
        xs, ys = np.meshgrid(grid, grid)
        for _ in range(100 if FULL else 15):
            a, b = random_convex_quad(rng), random_convex_quad(rng)
            in_a, in_b = inside_convex(a, xs, ys), inside_convex(b, xs, ys)
            union = np.count_nonzero(in_a | in_b)
            estimate = np.count_nonzero(in_a & in_b) / union if union else 0.0
            self.assertLess(abs(quad_iou(a, b) - estimate), 1e-3)


class TestClipping(unittest.TestCase):
    """Tests del recorte Sutherland-Hodgman"""

    def test_overlapping_squares(self):
        a = QuadBox.from_rect(0, 0, 2, 2).as_array()
        b = QuadBox.from_rect(1, 1, 3, 3).as_array()
        clipped = clip_convex(a, b)
        xs, ys = clipped[:, 0], clipped[:, 1]
        self.assertAlmostEqual(xs.min(), 1.0)
        self.assertAlmostEqual(ys.max(), 2.0)

    def test_convexity(self):
        self.assertTrue(is_convex(QuadBox.from_rect(0, 0, 1, 1).as_array()))
        self.assertFalse(is_convex(QuadBox.from_coords([0, 0, 2, 1, 0, 2, 1, 1]).as_array()))


class TestLatticeAndStructure(unittest.TestCase):
    """Tests de GridLattice y de la invariante de partición"""

    def setUp(self):
        xs, ys = np.meshgrid([0.0, 10.0, 20.0], [0.0, 10.0])
        self.lattice = GridLattice(np.stack([xs, ys], axis=2))

    def test_lattice_dims_and_boxes(self):
        self.assertEqual(self.lattice.dims, (1, 2))
        self.assertEqual(self.lattice.box(0, 1).to_coords(), [10, 0, 20, 0, 20, 10, 10, 10])
        self.assertEqual(self.lattice.box_array().shape, (1, 2, 8))

    def test_lattice_rejects_bad_shape(self):
        with self.assertRaises(TSRError):
            GridLattice(np.zeros((1, 3, 2)))

    def test_corners_read_only(self):
        with self.assertRaises(ValueError):
            self.lattice.corners[0, 0, 0] = 5.0

    def test_partition_valid(self):
        ts = TableStructure((2, 2), (CellSpan(0, 1, 0, 0), CellSpan(0, 0, 1, 1), CellSpan(1, 1, 1, 1)))
        self.assertTrue(ts.is_valid())
        self.assertEqual(sum(c.size for c in ts.cells), 4)

    def test_partition_overlap_and_gap(self):
        overlap = TableStructure((1, 2), (CellSpan(0, 0, 0, 1), CellSpan(0, 0, 1, 1)))
        gap = TableStructure((1, 2), (CellSpan(0, 0, 0, 0),))
        self.assertFalse(overlap.is_valid())
        self.assertFalse(gap.is_valid())

    def test_cells_canonical_order(self):
        ts = TableStructure((1, 2), (CellSpan(0, 0, 1, 1), CellSpan(0, 0, 0, 0)))
        self.assertEqual([c.col_start for c in ts.cells], [0, 1])

    def test_singletons(self):
        ts = TableStructure.singletons(2, 3)
        self.assertEqual(len(ts.cells), 6)
        self.assertTrue(ts.is_valid())


if __name__ == '__main__':
    unittest.main(verbosity=2)
