"""
Tests de la decodificación KOR: keypoints, NMS 1-D, propuestas, desplazamientos y retícula
"""

import unittest

import numpy as np

from geometry import Point, polygon_area
from kor_decoder import (Axis, OffsetVector, SeparationLine, StartProbVector, apply_offsets,
                         build_lattice, decode_axis, detect_start_points, make_proposals,
                         num_keypoints, validate_lines)
from syngen import make_sample
from tsr_errors import TSRError, TSRErrorType


def row_line(values, extent=96, stride=32):
    values = np.asarray(values, dtype=np.float64)
    pos = np.arange(values.size) * float(stride)
    return SeparationLine(Axis.ROW, Point(0.0, float(values[0])), np.stack([pos, values], axis=1), extent)


class TestNumKeypoints(unittest.TestCase):
    """Tests de N_k = ⌈extensión / t⌉"""

    def test_values(self):
        self.assertEqual(num_keypoints(512, 32), 16)
        self.assertEqual(num_keypoints(1, 32), 1)
        self.assertEqual(num_keypoints(513, 32), 17)

    def test_zero_stride(self):
        with self.assertRaises(TSRError) as ctx:
            num_keypoints(512, 0)
        self.assertEqual(ctx.exception.error_type, TSRErrorType.INVALID_ARGUMENT)


class TestDetectStartPoints(unittest.TestCase):
    """Tests de la NMS 1-D por tramos"""

    def test_two_runs(self):
        probs = [0, .1, .8, .9, .7, .1, 0, 0, .6, .95, .2]
        self.assertEqual(detect_start_points(StartProbVector(Axis.ROW, probs), 0.5), [6, 18])

    def test_all_zeros(self):
        self.assertEqual(detect_start_points(StartProbVector(Axis.ROW, np.zeros(20))), [])

    def test_single_spike(self):
        p = np.zeros(12)
        p[5] = 1.0
        self.assertEqual(detect_start_points(StartProbVector(Axis.COL, p)), [10])

    def test_tie_takes_lowest_index(self):
        p = np.array([0.0, 0.9, 0.9, 0.9, 0.0])
        self.assertEqual(detect_start_points(StartProbVector(Axis.ROW, p)), [2])

    def test_threshold_is_strict(self):
        self.assertEqual(detect_start_points(StartProbVector(Axis.ROW, [0.5, 0.5])), [])

    def test_invalid_probabilities(self):
        with self.assertRaises(TSRError):
            StartProbVector(Axis.ROW, [0.2, 1.5])

    def test_recovers_generated_starts(self):
        """Inicios recuperados de los perfiles GT generados = inicios originales"""
        for style in ('wired', 'wireless'):
            sample = make_sample(5, rows=6, cols=4, style=style)
            rows = detect_start_points(sample.bundle.row_probs())
            cols = detect_start_points(sample.bundle.col_probs())
            self.assertEqual(rows, [int(l.start_coord) for l in sample.lattice.row_lines])
            self.assertEqual(cols, [int(l.start_coord) for l in sample.lattice.col_lines])


class TestProposalsAndOffsets(unittest.TestCase):
    """Tests de propuestas de keypoints y aplicación de desplazamientos"""

    def test_row_proposals(self):
        props = make_proposals(Point(0, 100), Axis.ROW, 96, 32)
        self.assertEqual([p.as_tuple() for p in props.points], [(0, 100), (32, 100), (64, 100)])

    def test_col_proposals(self):
        props = make_proposals(Point(40, 0), Axis.COL, 64, 32)
        self.assertEqual([p.as_tuple() for p in props.points], [(40, 0), (40, 32)])

    def test_single_proposal(self):
        self.assertEqual(make_proposals(Point(0, 8), Axis.ROW, 32, 32).num_keypoints, 1)

    def test_proposal_x_coordinates_512(self):
        props = make_proposals(Point(0, 50), Axis.ROW, 512, 32)
        self.assertEqual([p.x for p in props.points], [float(32 * j) for j in range(16)])

    def test_row_start_must_have_zero_x(self):
        with self.assertRaises(TSRError):
            make_proposals(Point(3, 50), Axis.ROW, 96, 32)

    def test_additive_offset(self):
        props = make_proposals(Point(0, 100), Axis.ROW, 96, 32)
        line = apply_offsets(props, OffsetVector(Axis.ROW, [0.0, 0.0, 6.0]))
        self.assertEqual(tuple(line.keypoints[2]), (64.0, 106.0))

    def test_zero_offsets_bit_exact(self):
        props = make_proposals(Point(0, 37.25), Axis.ROW, 512, 32)
        line = apply_offsets(props, OffsetVector(Axis.ROW, np.zeros(16)))
        np.testing.assert_array_equal(line.keypoints, props.as_array())

    def test_clamp_below_zero(self):
        props = make_proposals(Point(0, 4), Axis.ROW, 96, 32)
        line = apply_offsets(props, OffsetVector(Axis.ROW, [-10.0, 0.0, 0.0]))
        self.assertEqual(line.keypoints[0, 1], 0.0)

    def test_clamp_above_cross_extent(self):
        props = make_proposals(Point(0, 100), Axis.ROW, 96, 32, cross_extent=128)
        line = apply_offsets(props, OffsetVector(Axis.ROW, [1e6, 20.0, -1e6]))
        np.testing.assert_array_equal(line.keypoints[:, 1], [127.0, 120.0, 0.0])

    def test_no_cross_extent_clamps_only_below(self):
        props = make_proposals(Point(0, 100), Axis.ROW, 96, 32)
        line = apply_offsets(props, OffsetVector(Axis.ROW, [1e3, 0.0, -1e3]))
        np.testing.assert_array_equal(line.keypoints[:, 1], [1100.0, 100.0, 0.0])

    def test_length_mismatch(self):
        props = make_proposals(Point(0, 4), Axis.ROW, 96, 32)
        with self.assertRaises(TSRError):
            apply_offsets(props, OffsetVector(Axis.ROW, [1.0, 2.0]))


class TestValidateLines(unittest.TestCase):
    """Tests de detección de cruces y violaciones de orden"""

    def test_parallel_clean(self):
        self.assertTrue(validate_lines([row_line([10, 10, 10]), row_line([20, 20, 20])]).clean)

    def test_crossing_reported(self):
        report = validate_lines([row_line([10, 10, 10]), row_line([12, 8, 8])])
        self.assertEqual(len(report.crossings), 1)
        self.assertEqual(report.crossings[0]['lines'], [0, 1])
        self.assertEqual(report.crossings[0]['keypoint'], 1)

    def test_out_of_order(self):
        report = validate_lines([row_line([20, 20, 20]), row_line([10, 10, 10])])
        self.assertFalse(report.clean)
        self.assertEqual(report.crossings, [])
        self.assertEqual(report.ordering[0]['lines'], [0, 1])


class TestBuildLattice(unittest.TestCase):
    """Tests de intersección de polilíneas en la retícula"""

    def test_single_box(self):
        rows = [SeparationLine.straight(Axis.ROW, y, 11, stride=4) for y in (0, 10)]
        cols = [SeparationLine.straight(Axis.COL, x, 11, stride=4) for x in (0, 10)]
        lattice = build_lattice(rows, cols)
        self.assertEqual(lattice.dims, (1, 1))
        np.testing.assert_allclose(lattice.box(0, 0).to_coords(), [0, 0, 10, 0, 10, 10, 0, 10])

    def test_tiling_area(self):
        rows = [SeparationLine.straight(Axis.ROW, y, 100) for y in (0, 30, 90)]
        cols = [SeparationLine.straight(Axis.COL, x, 100) for x in (0, 40, 80)]
        lattice = build_lattice(rows, cols)
        self.assertEqual(lattice.dims, (2, 2))
        total = sum(polygon_area(q) for row in lattice.boxes for q in row)
        self.assertAlmostEqual(total, 90.0 * 80.0)

    def test_sinusoidal_row_corner(self):
        """La y de cada esquina coincide con la interpolación de la polilínea en la x de la columna"""
        pos = np.arange(16) * 32.0
        values = 200.0 + 6.0 * np.sin(pos / 70.0)
        wavy = SeparationLine(Axis.ROW, Point(0.0, 200.0), np.stack([pos, values], axis=1), 512)
        rows = [SeparationLine.straight(Axis.ROW, 50, 512), wavy, SeparationLine.straight(Axis.ROW, 400, 512)]
        xs = (10.0, 75.0, 301.0, 500.0)
        cols = [SeparationLine.straight(Axis.COL, x, 512) for x in xs]
        lattice = build_lattice(rows, cols)
        for j, x in enumerate(xs):
            self.assertAlmostEqual(lattice.corners[1, j, 0], x, places=9)
            self.assertAlmostEqual(lattice.corners[1, j, 1], float(np.interp(x, pos, values)), places=9)

    def test_too_few_lines(self):
        with self.assertRaises(TSRError) as ctx:
            build_lattice([SeparationLine.straight(Axis.ROW, 5, 64)],
                          [SeparationLine.straight(Axis.COL, x, 64) for x in (0, 10)])
        self.assertEqual(ctx.exception.error_type, TSRErrorType.LATTICE)

    def test_crossing_lines_rejected(self):
        rows = [row_line([10, 10, 10]), row_line([12, 8, 8])]
        cols = [SeparationLine.straight(Axis.COL, x, 20, stride=32) for x in (0, 90)]
        with self.assertRaises(TSRError) as ctx:
            build_lattice(rows, cols)
        self.assertEqual(ctx.exception.error_code, 'invalid_lines')


class TestDecodeAxis(unittest.TestCase):
    """Tests de la decodificación de un eje completo"""

    def test_no_starts(self):
        with self.assertRaises(TSRError) as ctx:
            decode_axis(StartProbVector(Axis.ROW, np.zeros(32)), np.zeros((0, 2)), (64, 64), 32)
        self.assertEqual(ctx.exception.error_type, TSRErrorType.NO_SEPARATION_LINES)
        self.assertTrue(ctx.exception.message.startswith("no separation lines"))

    def test_missing_offset_rows_are_zero(self):
        p = np.zeros(32)
        p[[3, 20]] = 1.0
        lines, issues = decode_axis(StartProbVector(Axis.ROW, p), np.array([[1.0, 2.0]]), (64, 64), 32)
        self.assertEqual(len(lines), 2)
        self.assertEqual(len(issues), 1)
        np.testing.assert_array_equal(lines[0].values, [7.0, 8.0])
        np.testing.assert_array_equal(lines[1].values, [40.0, 40.0])


if __name__ == '__main__':
    unittest.main(verbosity=2)
