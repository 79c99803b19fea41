#!/usr/bin/env python3
"""
🧩 CLI del reconocedor de estructura de tablas split-and-merge

Comandos: syngen, decode, eval, gradcheck, bench, heads
"""

import argparse
import glob
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from kor_decoder import decode_axis
from losses import GRADCHECK_FAMILIES, GRADCHECK_TOLERANCE, check_gradients, cross_entropy, focal_loss, gradcheck_suite
from merge_codec import cell_polygons, representation_footprint
from metrics import PROTOCOL_NOTE, EvalRecord, aggregate_records, evaluate_sample
from heads_runner import make_demo_pack, run_heads
from syngen import STYLES, make_bench_bundle, make_sample, render_sample
from table_pipeline import decode_bundle, decode_split, instance_mask_baseline
from tsr_config import RunConfig, load_run_config
from tsr_errors import EXIT_OK, TSRError, TSRErrorHandler, TSRErrorType
from tsr_formats import (load_bundle, load_feature_pack, load_structure,
                         save_bundle, save_feature_pack, save_structure, write_json, write_pgm)
from tsr_logger import tsr_logger

# Umbrales del benchmark (tendencia de coste por número de líneas)
BENCH_KOR_MAX_RATIO = 5.0
BENCH_IS_MIN_RATIO = 4.0
BENCH_IS_OVER_KOR = 3.0


def sample_seed(seed: int, index: int) -> int:
    """Semilla por muestra, independiente del orden de ejecución"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _pool_map(fn, items: Sequence, workers: int) -> List:
    """map ordenado canónicamente; con workers > 1 usa un pool de hilos"""
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _ensure_dir(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise TSRError(f"no se puede crear {path}: {exc}", TSRErrorType.IO, details={'path': path})


# ============================================================================
# syngen
# ============================================================================

def cmd_syngen(args, cfg: RunConfig) -> int:
    """Genera n muestras sintéticas con su manifiesto"""
    if args.n < 1:
        raise TSRErrorHandler.invalid_argument(f"--n debe ser >= 1: {args.n}")
    _ensure_dir(args.out)
    styles = list(STYLES) if args.style == 'mixed' else [args.style]
    image_size = (args.width, args.height)

    def generate(i: int):
        return make_sample(sample_seed(cfg.seed, i), args.rows, args.cols, args.span_prob,
                           args.amplitude, styles[i % len(styles)], image_size, cfg.stride,
                           cfg.region_thickness, args.max_span)

    samples = _pool_map(generate, range(args.n), cfg.workers)
    entries = []
    for i, sample in enumerate(samples):
        sample_id = f"sample_{i:05d}"
        base = os.path.join(args.out, sample_id)
        save_structure(f"{base}.structure.json", sample.structure, sample.lattice, sample.style)
        save_bundle(f"{base}.bundle.json", sample.bundle)
        if args.render:
            write_pgm(f"{base}.pgm", render_sample(sample))
        entries.append({'id': sample_id, 'seed': sample.seed, 'style': sample.style,
                        'lattice_dims': list(sample.structure.lattice_dims),
                        'cells': len(sample.structure.cells)})
    write_json(os.path.join(args.out, 'manifest.json'), {
        'command': 'syngen',
        'config': cfg.model_dump(),
        'params': {'n': args.n, 'rows': args.rows, 'cols': args.cols, 'span_prob': args.span_prob,
                   'amplitude': args.amplitude, 'style': args.style, 'image_size': list(image_size),
                   'max_span': args.max_span, 'render': bool(args.render)},
        'samples': entries,
    })
    print(f"✅ {args.n} muestras escritas en {args.out}")
    return EXIT_OK


# ============================================================================
# decode
# ============================================================================

def _decode_file(bundle_path: str, out_path: str, cfg: RunConfig) -> Dict[str, float]:
    result = decode_bundle(load_bundle(bundle_path), cfg.nms_threshold)
    report = result.report()
    report['config'] = cfg.model_dump()
    save_structure(out_path, result.structure, result.lattice, report=report)
    # Los tiempos van aparte: structure.json es determinista
    write_json(f"{out_path}.timings.json", result.timings)
    return result.timings


def cmd_decode(args, cfg: RunConfig) -> int:
    """Decodifica un bundle (o un directorio de bundles) en structure.json"""
    if os.path.isdir(args.bundle):
        _ensure_dir(args.out)
        paths = sorted(glob.glob(os.path.join(args.bundle, '*.bundle.json')))
        if not paths:
            raise TSRErrorHandler.invalid_argument(f"no hay *.bundle.json en {args.bundle}")

        def run(path: str):
            sample_id = os.path.basename(path)[:-len('.bundle.json')]
            return _decode_file(path, os.path.join(args.out, f"{sample_id}.structure.json"), cfg)

        timings = _pool_map(run, paths, cfg.workers)
        split = float(np.median([t['split_us'] for t in timings]))
        merge = float(np.median([t['merge_us'] for t in timings]))
        print(f"✅ {len(paths)} bundles decodificados (mediana split {split:.1f} µs, merge {merge:.1f} µs)")
        return EXIT_OK
    timings = _decode_file(args.bundle, args.out, cfg)
    print(f"✅ Estructura escrita en {args.out} (split {timings['split_us']:.1f} µs, "
          f"merge {timings['merge_us']:.1f} µs)")
    return EXIT_OK


# ============================================================================
# eval
# ============================================================================

def _structure_files(path: str) -> Dict[str, str]:
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, '*.structure.json')))
        return {os.path.basename(f)[:-len('.structure.json')]: f for f in files}
    name = os.path.basename(path)
    sample_id = name[:-len('.structure.json')] if name.endswith('.structure.json') else name
    return {sample_id: path}


def _load_for_eval(path: str):
    model = load_structure(path)
    ts = model.to_structure()
    lattice = model.to_lattice()
    if lattice is not None and any(c.polygon is None for c in ts.cells):
        ts = cell_polygons(ts, lattice)
    return ts, lattice, model.style


def cmd_eval(args, cfg: RunConfig) -> int:
    """Métricas por muestra y agregadas (micro-promedio global y por estilo)"""
    preds = _structure_files(args.pred)
    gts = _structure_files(args.gt)
    if os.path.isfile(args.pred) and os.path.isfile(args.gt):
        preds = {sample_id: args.pred for sample_id in gts}
    unmatched = sorted(set(gts) - set(preds))
    if unmatched:
        raise TSRErrorHandler.invalid_argument(
            f"faltan predicciones para: {', '.join(unmatched)}", unmatched=unmatched)
    if not gts:
        raise TSRErrorHandler.invalid_argument(f"no hay archivos *.structure.json en {args.gt}")
    metrics = ('cells', 'grid', 'teds') if args.metric == 'all' else (args.metric,)

    def run(sample_id: str) -> EvalRecord:
        pred_ts, pred_lat, _ = _load_for_eval(preds[sample_id])
        gt_ts, gt_lat, style = _load_for_eval(gts[sample_id])
        return evaluate_sample(sample_id, pred_ts, gt_ts, pred_lat, gt_lat, metrics,
                               cfg.cell_iou, cfg.grid_iou, style)

    records = _pool_map(run, sorted(gts), cfg.workers)
    aggregate = aggregate_records(records)
    report = {'protocol': PROTOCOL_NOTE, 'config': cfg.model_dump(), 'metrics': list(metrics),
              'samples': [r.to_dict() for r in records], 'aggregate': aggregate}
    for rec in records:
        parts = [rec.sample_id]
        if rec.cells is not None:
            parts.append("cells P=%.4f R=%.4f F1=%.4f" % rec.cells.as_tuple())
        if rec.grid is not None:
            parts.append("grid F1-G=%.4f" % rec.grid.f1)
        if rec.teds is not None:
            parts.append("TEDS-S=%.4f" % rec.teds)
        print("  ".join(parts))
    overall = aggregate['all']
    summary = [f"📊 {overall['samples']} muestras"]
    if 'cells' in overall:
        summary.append(f"cells F1={overall['cells']['f1']:.4f}")
    if 'grid' in overall:
        summary.append(f"F1-G={overall['grid']['f1']:.4f}")
    if 'teds_struct' in overall:
        summary.append(f"TEDS-S={overall['teds_struct']:.4f}")
    print("  ".join(summary))
    if args.report:
        write_json(args.report, report)
    return EXIT_OK


# ============================================================================
# gradcheck
# ============================================================================

def cmd_gradcheck(args, cfg: RunConfig) -> int:
    """Diferencias finitas sobre las cuatro familias de pérdida"""
    worst = gradcheck_suite(args.trials, cfg.seed, cfg.focal_gamma, cfg.focal_alpha,
                            corrupt=args.corrupt_gradient)
    for family in GRADCHECK_FAMILIES:
        status = '✅' if worst[family] < GRADCHECK_TOLERANCE else '❌'
        print(f"{status} {family:<13} peor error relativo {worst[family]:.3e}")
    rng = np.random.default_rng(cfg.seed)
    p = rng.uniform(0.05, 0.95, (4, 4, 4))
    y = np.eye(4)[rng.integers(0, 4, (4, 4))]
    gap = abs(focal_loss(p, y, 0.0, 1.0, class_axis=-1)[0] - cross_entropy(p, y, class_axis=-1)[0])
    print(f"ℹ️  |focal(γ=0, α=1) - CE| = {gap:.3e}")
    check_gradients(worst)
    return EXIT_OK


# ============================================================================
# bench
# ============================================================================

def _median_mad(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    med = float(np.median(arr))
    return med, float(np.median(np.abs(arr - med)))


def _time_ms(fn, repeats: int) -> Tuple[float, float]:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return _median_mad(samples)


def cmd_bench(args, cfg: RunConfig) -> int:
    """Tiempo de la ruta KOR frente a la simulación por máscaras de instancia"""
    try:
        sizes = sorted({int(s) for s in args.sizes.split(',') if s.strip()})
    except ValueError:
        raise TSRErrorHandler.invalid_argument(f"--sizes inválido: {args.sizes}")
    if not sizes or sizes[0] < 2 or args.repeats < 1:
        raise TSRErrorHandler.invalid_argument("se requieren tamaños >= 2 y repeats >= 1")
    rng = np.random.default_rng(cfg.seed)
    features = rng.standard_normal((args.is_channels, args.image, args.image))
    kernels = rng.standard_normal((8, args.is_channels))
    rows_out = []
    print(f"{'rows+cols':>9} {'KOR ms':>10} {'±MAD':>8} {'IS ms':>10} {'±MAD':>8} {'MA elems':>9} {'MP elems':>11}")
    for total in sizes:
        bundle = make_bench_bundle(total, args.image, cfg.stride, cfg.seed)
        row_lines, _ = decode_axis(bundle.row_probs(), bundle.row_offsets, bundle.image_size,
                                   bundle.stride, cfg.nms_threshold)
        col_lines, _ = decode_axis(bundle.col_probs(), bundle.col_offsets, bundle.image_size,
                                   bundle.stride, cfg.nms_threshold)
        lines = row_lines + col_lines
        kor, kor_mad = _time_ms(lambda: decode_split(bundle, cfg.nms_threshold), args.repeats)
        ism, is_mad = _time_ms(lambda: instance_mask_baseline(features, lines, kernels), args.repeats)
        footprint = representation_footprint(len(row_lines) - 1, len(col_lines) - 1)
        rows_out.append({'size': total, 'kor_ms': kor, 'kor_mad': kor_mad, 'is_ms': ism, 'is_mad': is_mad,
                         **footprint})
        print(f"{total:>9} {kor:>10.3f} {kor_mad:>8.3f} {ism:>10.3f} {is_mad:>8.3f} "
              f"{footprint['action_map']:>9} {footprint['merge_maps']:>11}")
        tsr_logger.log_performance('bench', kor, records_processed=total, is_ms=ism)
    if args.out:
        write_json(args.out, {'config': cfg.model_dump(), 'image': args.image,
                              'repeats': args.repeats, 'rows': rows_out})
    if len(rows_out) >= 2:
        first, last = rows_out[0], rows_out[-1]
        checks = {
            'kor_ratio': (last['kor_ms'] / first['kor_ms'], last['kor_ms'] <= BENCH_KOR_MAX_RATIO * first['kor_ms']),
            'is_ratio': (last['is_ms'] / first['is_ms'], last['is_ms'] >= BENCH_IS_MIN_RATIO * first['is_ms']),
            'is_over_kor': (last['is_ms'] / last['kor_ms'], last['is_ms'] >= BENCH_IS_OVER_KOR * last['kor_ms']),
        }
        for name, (value, ok) in checks.items():
            print(f"{'✅' if ok else '❌'} {name} = {value:.2f}")
        failing = [name for name, (_, ok) in checks.items() if not ok]
        if failing:
            raise TSRError(f"benchmark fuera de umbral: {failing}", TSRErrorType.ACCEPTANCE,
                           error_code='bench', details={k: v for k, (v, _) in checks.items()})
    return EXIT_OK


# ============================================================================
# heads
# ============================================================================

def cmd_heads(args, cfg: RunConfig) -> int:
    """Ejecuta las cabezas sobre un FeaturePack (SEMF o de demostración) y escribe el bundle"""
    if args.pack:
        fp = load_feature_pack(args.pack)
    else:
        fp = make_demo_pack(cfg.seed, (args.image, args.image), args.channels, args.grid_channels,
                            cfg.stride, args.rows, args.cols, cfg.pe_depth)
    if args.save_pack:
        save_feature_pack(args.save_pack, fp)
    bundle = run_heads(fp, cfg.nms_threshold, cfg.workers)
    save_bundle(args.out, bundle)
    m, n = bundle.actions.dims
    print(f"✅ Bundle escrito en {args.out} (retícula {m}×{n})")
    return EXIT_OK


# ============================================================================
# main
# ============================================================================

COMMANDS = {
    'syngen': cmd_syngen,
    'decode': cmd_decode,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'bench': cmd_bench,
    'heads': cmd_heads,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Reconocimiento de estructura de tablas split-and-merge")
    parser.add_argument("--env-file", default=None, help="Archivo .env con la configuración")
    parser.add_argument("--stride", type=int, default=None, help="Paso de muestreo de keypoints t")
    parser.add_argument("--threshold", type=float, default=None, help="Umbral NMS θ")
    parser.add_argument("--seed", type=int, default=None, help="Semilla global")
    parser.add_argument("--workers", type=int, default=None, help="Hilos del pool de trabajo")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("syngen", help="Generar tablas sintéticas")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--span-prob", type=float, default=0.3)
    p.add_argument("--amplitude", type=float, default=0.0, help="Amplitud de la deformación en px")
    p.add_argument("--style", choices=list(STYLES) + ['mixed'], default='wired')
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--max-span", type=int, default=4)
    p.add_argument("--render", action="store_true", help="Escribir rásters PGM")
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="Decodificar bundles en estructuras")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="Evaluar predicciones contra GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--metric", choices=['cells', 'grid', 'teds', 'all'], default='all')
    p.add_argument("--report", default=None)

    p = sub.add_parser("gradcheck", help="Verificar gradientes por diferencias finitas")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--corrupt-gradient", choices=GRADCHECK_FAMILIES, default=None,
                   help=argparse.SUPPRESS)

    p = sub.add_parser("bench", help="Benchmark KOR frente a máscaras de instancia")
    p.add_argument("--sizes", default="20,40,60,80,100,120")
    p.add_argument("--image", type=int, default=512)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--is-channels", type=int, default=8)
    p.add_argument("--out", default=None)

    p = sub.add_parser("heads", help="Ejecutar las cabezas sobre un FeaturePack")
    p.add_argument("--pack", default=None, help="FeaturePack SEMF (por defecto uno de demostración)")
    p.add_argument("--save-pack", default=None)
    p.add_argument("--image", type=int, default=256)
    p.add_argument("--channels", type=int, default=256)
    p.add_argument("--grid-channels", type=int, default=512)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Punto de entrada: devuelve el código de salida"""
    parser = build_parser()
    args = parser.parse_args(argv)
    arguments = {k: v for k, v in vars(args).items() if k != 'command'}
    start = time.perf_counter()
    try:
        cfg = load_run_config(args.env_file, stride=args.stride, nms_threshold=args.threshold,
                              seed=args.seed, workers=args.workers)
        tsr_logger.configure()
        code = COMMANDS[args.command](args, cfg)
    except TSRError as exc:
        code = TSRErrorHandler.exit_code(exc)
        tsr_logger.log_error(exc.error_type.value, exc.message, context=exc.details,
                             error_code=exc.error_code, exception=exc)
        print(f"❌ {exc}", file=sys.stderr)
    tsr_logger.log_command(args.command, arguments, code, (time.perf_counter() - start) * 1000.0)
    return code


if __name__ == "__main__":
    sys.exit(main())
