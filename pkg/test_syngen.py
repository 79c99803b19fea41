"""
Tests del generador sintético y del pipeline completo sobre bundles GT
"""

import os
import unittest

import numpy as np

from geometry import TableStructure, polygon_area
from kor_decoder import validate_lines
from metrics import cell_adjacency_f1, grid_f1
from syngen import (amplitude_for_fraction, emit_gt_bundle, gen_layout, line_bases, make_bench_bundle,
                    make_sample, perturb_bundle, render_sample, warp_lattice)
from table_pipeline import decode_bundle, decode_split
from tsr_errors import TSRError

FULL = os.getenv('TSR_FULL_ACCEPTANCE') == '1'


def shoelace(points):
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def boundary_loop(corners):
    """Esquinas exteriores de la retícula en orden: arriba, derecha, abajo, izquierda"""
    return np.concatenate([corners[0, :-1], corners[:-1, -1], corners[-1, :0:-1], corners[:0:-1, 0]])


class TestGenLayout(unittest.TestCase):
    """Tests de particiones aleatorias"""

    def test_no_spans_gives_singletons(self):
        self.assertEqual(gen_layout(0, 4, 6, 0.0), TableStructure.singletons(4, 6))

    def test_single_grid(self):
        self.assertEqual(len(gen_layout(3, 1, 1, 0.9).cells), 1)

    def test_deterministic(self):
        self.assertEqual(gen_layout(11, 8, 8, 0.5), gen_layout(11, 8, 8, 0.5))

    def test_valid_partitions(self):
        for seed in range(50):
            ts = gen_layout(seed, 1 + seed % 9, 1 + seed % 7, 0.6, max_span=3)
            self.assertTrue(ts.is_valid(), ts.partition_issues())
            self.assertTrue(all(c.rowspan <= 3 and c.colspan <= 3 for c in ts.cells))

    def test_invalid_arguments(self):
        with self.assertRaises(TSRError):
            gen_layout(0, 0, 3, 0.1)
        with self.assertRaises(TSRError):
            gen_layout(0, 2, 3, 1.0)


class TestWarpLattice(unittest.TestCase):
    """Tests de líneas deformadas"""

    def test_zero_amplitude_is_straight(self):
        rows, cols = warp_lattice(3, 4, (512, 512), 0.0, 0)
        for line in rows + cols:
            np.testing.assert_array_equal(line.values, line.start_coord)

    def test_even_bases(self):
        bases = line_bases(8, 457, 4.0)
        np.testing.assert_array_equal(bases % 2, 0.0)
        np.testing.assert_array_equal(np.diff(bases), 64.0)

    def test_amplitude_bound(self):
        with self.assertRaises(TSRError):
            warp_lattice(5, 5, (512, 512), 100.0, 0)

    def test_no_crossings_near_bound(self):
        for seed in range(200 if FULL else 40):
            rows, cols = 2 + seed % 6, 2 + (seed * 7) % 6
            amplitude = amplitude_for_fraction(rows, cols, (512, 512), 0.4)
            row_lines, col_lines = warp_lattice(rows, cols, (512, 512), amplitude, seed)
            self.assertTrue(validate_lines(row_lines).clean)
            self.assertTrue(validate_lines(col_lines).clean)

    def test_tiling_area(self):
        """La suma de áreas de los grids es el área del contorno exterior"""
        sample = make_sample(9, rows=6, cols=5, amplitude=amplitude_for_fraction(6, 5, (512, 512), 0.3))
        corners = sample.lattice.corners
        total = sum(polygon_area(q) for row in sample.lattice.boxes for q in row)
        self.assertAlmostEqual(total, shoelace(boundary_loop(corners)), delta=1e-6)

    def test_fraction_range(self):
        with self.assertRaises(TSRError):
            amplitude_for_fraction(4, 4, (512, 512), 0.5)


class TestEmitBundle(unittest.TestCase):
    """Tests del bundle GT"""

    def test_straight_lines_zero_offsets(self):
        b = make_sample(2, rows=4, cols=3).bundle
        np.testing.assert_array_equal(b.row_offsets, 0.0)
        np.testing.assert_array_equal(b.col_offsets, 0.0)
        self.assertEqual(b.row_offsets.shape, (5, 16))

    def test_offsets_are_keypoint_minus_base(self):
        sample = make_sample(3, rows=4, cols=4, amplitude=amplitude_for_fraction(4, 4, (512, 512), 0.3))
        for line, off in zip(sample.lattice.row_lines, sample.bundle.row_offsets):
            np.testing.assert_array_equal(line.start_coord + off, line.values)
        self.assertGreater(float(np.max(np.abs(sample.bundle.row_offsets))), 0.0)

    def test_dimension_mismatch(self):
        rows, cols = warp_lattice(3, 3, (256, 256), 0.0, 0)
        with self.assertRaises(TSRError):
            emit_gt_bundle(TableStructure.singletons(2, 3), rows, cols)

    def test_bench_bundle(self):
        b = make_bench_bundle(20, image=512)
        self.assertEqual((b.row_offsets.shape[0], b.col_offsets.shape[0]), (11, 11))
        self.assertEqual(int(np.count_nonzero(b.row_start_prob)), 11)


class TestOraclePipeline(unittest.TestCase):
    """Bundle GT → decode_bundle recupera la estructura y la retícula exactas"""

    def test_gt_bundles_decode_exactly(self):
        rng = np.random.default_rng(0)
        for k in range(500 if FULL else 20):
            rows, cols = (int(v) for v in rng.integers(1, 11, 2))
            style = 'wired' if k % 2 == 0 else 'wireless'
            amplitude = amplitude_for_fraction(rows, cols, (512, 512), float(rng.uniform(0.0, 0.4)))
            sample = make_sample(k, rows, cols, float(rng.uniform(0.0, 0.6)), amplitude, style)
            result = decode_bundle(sample.bundle)
            self.assertEqual(result.structure, sample.structure)
            self.assertEqual(cell_adjacency_f1(result.structure, sample.structure).f1, 1.0)
            self.assertEqual(grid_f1(result.lattice, sample.lattice).f1, 1.0)
            self.assertTrue(result.codec.clean)


class TestPerturbBundle(unittest.TestCase):
    """Tests del ruido sobre bundles"""

    def setUp(self):
        self.sample = make_sample(1, rows=7, cols=7, span_prob=0.3, image_size=(457, 457))

    def test_zero_noise_identity(self):
        b = perturb_bundle(self.sample.bundle, seed=5)
        np.testing.assert_array_equal(b.row_start_prob, self.sample.bundle.row_start_prob)
        np.testing.assert_array_equal(b.col_offsets, self.sample.bundle.col_offsets)
        np.testing.assert_array_equal(b.actions.actions, self.sample.bundle.actions.actions)

    def test_small_offset_noise_keeps_grids(self):
        b = perturb_bundle(self.sample.bundle, sigma_offset=0.5, seed=2)
        lattice, _, _ = decode_split(b)
        self.assertEqual(grid_f1(lattice, self.sample.lattice, 0.9).f1, 1.0)

    def test_full_flip_still_partition(self):
        b = perturb_bundle(self.sample.bundle, flip_rate=1.0, seed=3)
        self.assertFalse(np.any(b.actions.actions == self.sample.bundle.actions.actions))
        self.assertTrue(decode_bundle(b).structure.is_valid())

    def test_invalid_flip_rate(self):
        with self.assertRaises(TSRError):
            perturb_bundle(self.sample.bundle, flip_rate=1.5)


class TestRender(unittest.TestCase):
    """Tests del ráster de depuración"""

    def test_wired_strokes(self):
        sample = make_sample(0, rows=3, cols=4, span_prob=0.0, image_size=(320, 256))
        raster = render_sample(sample)
        self.assertEqual(raster.shape, (256, 320))
        for line in sample.lattice.row_lines:
            np.testing.assert_array_equal(raster[int(line.start_coord), :], 0)
        for line in sample.lattice.col_lines:
            np.testing.assert_array_equal(raster[:, int(line.start_coord)], 0)

    def test_deterministic(self):
        sample = make_sample(4, amplitude=5.0)
        np.testing.assert_array_equal(render_sample(sample), render_sample(sample))

    def test_wireless_shading(self):
        sample = make_sample(0, rows=2, cols=2, span_prob=0.0, style='wireless', image_size=(128, 128))
        values = set(np.unique(render_sample(sample)).tolist())
        self.assertTrue({235, 250} <= values)
        self.assertNotIn(0, values)


if __name__ == '__main__':
    unittest.main(verbosity=2)
