"""
Generador sintético de tablas deformadas

Produce estructuras GT, retículas deformadas con senoides suaves y bundles
de predicción perfectos o ruidosos, además de rásters PGM de depuración.
Todo es función pura de (semilla, parámetros).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from geometry import CellSpan, GridLattice, Point, TableStructure
from heads import ACTIONS
from kor_decoder import Axis, SeparationLine, build_lattice, num_keypoints
from losses import NEIGHBORHOOD_RADIUS, dilate_start_gt
from merge_codec import MergeActionMap, cell_polygons, encode_actions
from table_pipeline import PredictionBundle, half_resolution
from tsr_errors import TSRErrorHandler

STYLES = ('wired', 'wireless')
DEFAULT_REGION_THICKNESS = 6
# Caída del perfil de probabilidad dentro de la vecindad: el pico queda en el inicio
PROFILE_DECAY = 0.01
# Los desplazamientos son múltiplos diádicos: base + δ y keypoint - base son exactos en float64
WARP_QUANTUM = 2.0 ** -16


@dataclass(frozen=True)
class SynSample:
    """Muestra sintética con su estructura, retícula y bundle GT"""
    image_size: Tuple[int, int]
    structure: TableStructure
    lattice: GridLattice
    bundle: PredictionBundle
    seed: int
    style: str = 'wired'


def gen_layout(seed: int, rows: int, cols: int, span_prob: float, max_span: int = 4) -> TableStructure:
    """
    Partición rectangular aleatoria

    Recorre los grids fila a fila; con probabilidad span_prob la celda dueña
    se fusiona con la celda vecina de la derecha (y luego la de abajo) si
    comparten exactamente el mismo borde y la fusión no excede max_span.
    """
    if rows < 1 or cols < 1:
        raise TSRErrorHandler.invalid_argument(f"dimensiones inválidas ({rows}, {cols})")
    if not 0.0 <= span_prob < 1.0:
        raise TSRErrorHandler.invalid_argument(f"span_prob fuera de [0, 1): {span_prob}")
    rng = np.random.default_rng(seed)
    owner = np.arange(rows * cols).reshape(rows, cols)
    cells = {int(owner[r, c]): [r, r, c, c] for r in range(rows) for c in range(cols)}

    def absorb(keep: int, drop: int, rect: List[int]):
        cells[keep] = rect
        del cells[drop]
        owner[rect[0]:rect[1] + 1, rect[2]:rect[3] + 1] = keep

    for r in range(rows):
        for c in range(cols):
            cid = int(owner[r, c])
            r0, r1, c0, c1 = cells[cid]
            if rng.random() < span_prob and c1 + 1 < cols:
                nid = int(owner[r0, c1 + 1])
                n0, n1, m0, m1 = cells[nid]
                if (n0, n1) == (r0, r1) and m1 - c0 + 1 <= max_span:
                    absorb(cid, nid, [r0, r1, c0, m1])
            r0, r1, c0, c1 = cells[cid]
            if rng.random() < span_prob and r1 + 1 < rows:
                nid = int(owner[r1 + 1, c0])
                n0, n1, m0, m1 = cells[nid]
                if (m0, m1) == (c0, c1) and n1 - r0 + 1 <= max_span:
                    absorb(cid, nid, [r0, n1, c0, c1])
    spans = [CellSpan(r0, r1, c0, c1) for r0, r1, c0, c1 in cells.values()]
    return TableStructure((rows, cols), tuple(spans))


def _even(v: float) -> float:
    return 2.0 * np.round(v / 2.0)


def line_bases(count: int, extent: int, margin: float) -> np.ndarray:
    """Coordenadas pares equiespaciadas de count líneas dentro de [margin, extent-1-margin]"""
    bases = _even(np.linspace(margin, extent - 1 - margin, count))
    if count > 1 and np.any(np.diff(bases) <= 0):
        raise TSRErrorHandler.invalid_argument(
            f"{count} líneas no caben en una extensión de {extent} px")
    return bases


def _warp_profile(rng: np.random.Generator, amplitude: float, extent: int):
    """Suma de 2 senoides de baja frecuencia con fase aleatoria, |w| <= amplitude"""
    freqs = rng.uniform(0.25, 1.5, 2)
    phases = rng.uniform(0.0, 2.0 * math.pi, 2)

    def warp(pos: np.ndarray) -> np.ndarray:
        pos = np.asarray(pos, dtype=np.float64)
        total = np.zeros_like(pos)
        for f, ph in zip(freqs, phases):
            total = total + 0.5 * amplitude * np.sin(2.0 * math.pi * f * pos / extent + ph)
        return np.round(total / WARP_QUANTUM) * WARP_QUANTUM

    return warp


def _margin(amplitude: float) -> float:
    return _even(math.ceil(amplitude) + 3)


def warp_lattice(rows: int, cols: int, image_size: Tuple[int, int], amplitude: float, seed: int,
                 stride: int = 32) -> Tuple[List[SeparationLine], List[SeparationLine]]:
    """
    Líneas base rectas y equiespaciadas más una perturbación senoidal de los
    keypoints (muestreados cada stride píxeles). Exige amplitude < media
    separación mínima entre líneas, lo que garantiza ausencia de cruces.
    """
    w, h = image_size
    if amplitude < 0:
        raise TSRErrorHandler.invalid_argument(f"amplitud negativa: {amplitude}")
    margin = _margin(amplitude)
    row_bases = line_bases(rows + 1, h, margin)
    col_bases = line_bases(cols + 1, w, margin)
    spacing = min(np.min(np.diff(row_bases)), np.min(np.diff(col_bases)))
    if amplitude >= spacing / 2.0:
        raise TSRErrorHandler.invalid_argument(
            f"amplitud {amplitude} px >= media separación mínima {spacing / 2.0} px",
            amplitude=amplitude, bound=float(spacing / 2.0))
    rng = np.random.default_rng(seed)

    def make(axis: Axis, bases: np.ndarray, extent: int) -> List[SeparationLine]:
        pos = np.arange(num_keypoints(extent, stride), dtype=np.float64) * stride
        lines = []
        for base in bases:
            val = base + _warp_profile(rng, amplitude, extent)(pos) if amplitude > 0 else np.full(pos.shape, base)
            kp = np.stack([pos, val], axis=1) if axis == Axis.ROW else np.stack([val, pos], axis=1)
            start = Point(0.0, float(base)) if axis == Axis.ROW else Point(float(base), 0.0)
            lines.append(SeparationLine(axis, start, kp, extent))
        return lines

    return make(Axis.ROW, row_bases, w), make(Axis.COL, col_bases, h)


def _start_profile(starts: Sequence[int], length: int, style: str, thickness: int,
                   dilate: bool) -> Tuple[np.ndarray, Optional[List[Tuple[int, int]]]]:
    """Vector de probabilidades GT con pico en cada inicio (índices a media resolución)"""
    prob = np.zeros(length)
    if not starts:
        return prob, []
    if not dilate:
        prob[list(starts)] = 1.0
        return prob, None
    if style == 'wired':
        regions = [(s - NEIGHBORHOOD_RADIUS, s + NEIGHBORHOOD_RADIUS) for s in starts]
        y_hat = dilate_start_gt(starts, length, 'wired')
    else:
        regions = [(s - thickness // 2, s - thickness // 2 + thickness - 1) for s in starts]
        y_hat = dilate_start_gt(starts, length, 'wireless', regions)
    # Regiones contiguas formarían un único tramo en la NMS
    for (_, prev_end), (next_start, _) in zip(regions[:-1], regions[1:]):
        if next_start <= prev_end + 1:
            raise TSRErrorHandler.invalid_argument(
                f"regiones GT {prev_end} / {next_start} demasiado próximas: las líneas se fundirían")
    reach = max(max(s - a, b - s) for s, (a, b) in zip(starts, regions))
    idx = np.arange(length)
    nearest = np.min(np.abs(idx[:, None] - np.asarray(starts)[None, :]), axis=1)
    prob = np.where(y_hat > 0, 1.0 - PROFILE_DECAY * nearest / (reach + 1), 0.0)
    return prob, regions


def emit_gt_bundle(structure: TableStructure, row_lines: Sequence[SeparationLine],
                   col_lines: Sequence[SeparationLine], style: str = 'wired', stride: int = 32,
                   image_size: Tuple[int, int] = None, thickness: int = DEFAULT_REGION_THICKNESS,
                   dilate: bool = True) -> PredictionBundle:
    """
    Bundle GT: perfiles de inicio dilatados por estilo, desplazamientos
    exactos (keypoint menos propuesta) y mapa de acciones codificado.
    """
    if style not in STYLES:
        raise TSRErrorHandler.invalid_argument(f"estilo desconocido: {style}")
    if structure.lattice_dims != (len(row_lines) - 1, len(col_lines) - 1):
        raise TSRErrorHandler.invalid_argument(
            f"estructura {structure.lattice_dims} inconsistente con {len(row_lines)}×{len(col_lines)} líneas")
    if image_size is None:
        image_size = (row_lines[0].extent, col_lines[0].extent)
    w, h = image_size

    def axis_part(lines: Sequence[SeparationLine], length: int):
        starts = []
        offsets = []
        for line in lines:
            coord = line.start_coord
            if coord % 2 != 0:
                raise TSRErrorHandler.invalid_argument(f"el inicio {coord} no es par")
            starts.append(int(coord) // 2)
            offsets.append(line.values - coord)
        prob, _ = _start_profile(starts, length, style, thickness, dilate)
        return prob, np.array(offsets)

    row_prob, row_off = axis_part(row_lines, half_resolution(h))
    col_prob, col_off = axis_part(col_lines, half_resolution(w))
    return PredictionBundle((w, h), stride, row_prob, col_prob, row_off, col_off,
                            encode_actions(structure))


def perturb_bundle(b: PredictionBundle, sigma_prob: float = 0.0, sigma_offset: float = 0.0,
                   flip_rate: float = 0.0, seed: int = 0) -> PredictionBundle:
    """Ruido gaussiano en probabilidades y desplazamientos; cambio uniforme de acciones"""
    if sigma_prob < 0 or sigma_offset < 0:
        raise TSRErrorHandler.invalid_argument("las desviaciones deben ser >= 0")
    if not 0.0 <= flip_rate <= 1.0:
        raise TSRErrorHandler.invalid_argument(f"flip_rate fuera de [0, 1]: {flip_rate}")
    rng = np.random.default_rng(seed)
    row_prob, col_prob = b.row_start_prob, b.col_start_prob
    row_off, col_off = b.row_offsets, b.col_offsets
    actions = b.actions
    if sigma_prob > 0:
        row_prob = np.clip(row_prob + rng.normal(0.0, sigma_prob, row_prob.shape), 0.0, 1.0)
        col_prob = np.clip(col_prob + rng.normal(0.0, sigma_prob, col_prob.shape), 0.0, 1.0)
    if sigma_offset > 0:
        row_off = row_off + rng.normal(0.0, sigma_offset, row_off.shape)
        col_off = col_off + rng.normal(0.0, sigma_offset, col_off.shape)
    if flip_rate > 0:
        act = actions.actions.copy()
        flip = rng.random(act.shape) < flip_rate
        # Sustituye por una de las otras tres acciones
        shift = rng.integers(1, 4, act.shape)
        current = np.array([ACTIONS.index(a) for a in act.reshape(-1)]).reshape(act.shape)
        replaced = np.array(list(ACTIONS))[(current + shift) % 4]
        act = np.where(flip, replaced, act)
        actions = MergeActionMap(act, actions.start_grid)
    return PredictionBundle(b.image_size, b.stride, row_prob, col_prob, row_off, col_off, actions)


def make_sample(seed: int, rows: int = 5, cols: int = 5, span_prob: float = 0.3,
                amplitude: float = 0.0, style: str = 'wired', image_size: Tuple[int, int] = (512, 512),
                stride: int = 32, thickness: int = DEFAULT_REGION_THICKNESS,
                max_span: int = 4) -> SynSample:
    """Muestra completa determinista por semilla"""
    layout_seed, warp_seed = np.random.SeedSequence(seed).generate_state(2)
    structure = gen_layout(int(layout_seed), rows, cols, span_prob, max_span)
    row_lines, col_lines = warp_lattice(rows, cols, image_size, amplitude, int(warp_seed), stride)
    lattice = build_lattice(row_lines, col_lines)
    bundle = emit_gt_bundle(structure, row_lines, col_lines, style, stride, image_size, thickness)
    return SynSample(tuple(image_size), cell_polygons(structure, lattice), lattice, bundle, int(seed), style)


def amplitude_for_fraction(rows: int, cols: int, image_size: Tuple[int, int], fraction: float) -> float:
    """Amplitud en px equivalente a una fracción (< 0.5) de la separación mínima entre líneas"""
    if not 0.0 <= fraction < 0.5:
        raise TSRErrorHandler.invalid_argument(f"fracción de amplitud fuera de [0, 0.5): {fraction}")
    w, h = image_size
    amplitude = 0.0
    # El margen depende de la amplitud y la separación del margen: punto fijo
    for _ in range(8):
        margin = _margin(amplitude)
        spacing = min(np.min(np.diff(line_bases(rows + 1, h, margin))),
                      np.min(np.diff(line_bases(cols + 1, w, margin))))
        target = float(fraction * spacing)
        if target == amplitude:
            break
        amplitude = target
    return amplitude


def make_bench_bundle(total: int, image: int = 512, stride: int = 32, seed: int = 0,
                      amplitude_fraction: float = 0.25) -> PredictionBundle:
    """Bundle GT para el benchmark: rows + cols = total, inicios como picos aislados"""
    rows = max(1, total // 2)
    cols = max(1, total - rows)
    size = (image, image)
    amplitude = amplitude_for_fraction(rows, cols, size, amplitude_fraction)
    row_lines, col_lines = warp_lattice(rows, cols, size, amplitude, seed, stride)
    structure = TableStructure.singletons(rows, cols)
    return emit_gt_bundle(structure, row_lines, col_lines, 'wired', stride, size, dilate=False)


def _stroke(line: SeparationLine, extent: int) -> List[Tuple[float, float]]:
    """Polilínea de los keypoints prolongada hasta el borde de la imagen"""
    pos = np.append(line.positions, float(extent - 1)) if line.positions[-1] < extent - 1 else line.positions
    val = line.value_at(pos)
    if line.axis == Axis.ROW:
        return list(zip(pos.tolist(), val.tolist()))
    return list(zip(val.tolist(), pos.tolist()))


def render_sample(s: SynSample) -> np.ndarray:
    """
    Ráster en escala de grises W×H de 8 bits

    wired: trazos de 1 px sobre las polilíneas. wireless: sin líneas, sombreado
    alterno por celda.
    """
    w, h = s.image_size
    image = Image.new('L', (w, h), 255)
    draw = ImageDraw.Draw(image)
    if s.style == 'wireless':
        for cell in s.structure.cells:
            if cell.polygon is None:
                continue
            shade = 235 if (cell.row_start + cell.col_start) % 2 == 0 else 250
            draw.polygon([p.as_tuple() for p in cell.polygon.corners], fill=shade)
        return np.array(image, dtype=np.uint8)
    for line in s.lattice.row_lines:
        draw.line(_stroke(line, w), fill=0, width=1)
    for line in s.lattice.col_lines:
        draw.line(_stroke(line, h), fill=0, width=1)
    return np.array(image, dtype=np.uint8)
