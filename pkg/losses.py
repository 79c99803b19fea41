"""
Funciones de pérdida del entrenamiento con gradientes analíticos

Cada pérdida devuelve (valor, gradiente respecto a la predicción). Los
gradientes se verifican con diferencias finitas centrales (fd_gradcheck).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from tsr_errors import TSRError, TSRErrorHandler, TSRErrorType

EPS = 1e-7
NEIGHBORHOOD_RADIUS = 4
LOSS_TERMS = ('l_sp_row', 'l_sp_col', 'l_delta_row', 'l_delta_col', 'l_ma', 'l_sg')
GRADCHECK_FAMILIES = ('start_point', 'offset', 'start_grid', 'merge_action')
GRADCHECK_TOLERANCE = 1e-5


def _as_array(x) -> np.ndarray:
    if hasattr(x, 'probs'):
        x = x.probs
    elif hasattr(x, 'deltas'):
        x = x.deltas
    return np.asarray(x, dtype=np.float64)


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise TSRErrorHandler.invalid_argument(f"{what}: forma {a.shape} != {b.shape}")


def dilate_start_gt(starts: Iterable[int], length: int, mode: str = 'wired',
                    regions: Optional[Sequence[Tuple[int, int]]] = None,
                    radius: int = NEIGHBORHOOD_RADIUS) -> np.ndarray:
    """
    Vector binario ŷ de puntos de inicio (índices a media resolución)

    wired: unos en |i - inicio| <= radius (vecindad de ancho 8).
    wireless: unos dentro de cada región de separación [a, b] inclusiva.
    """
    y = np.zeros(int(length), dtype=np.float64)
    if mode == 'wired':
        for s in starts:
            s = int(s)
            if not 0 <= s < length:
                raise TSRErrorHandler.invalid_argument(f"inicio {s} fuera de [0, {length})")
            y[max(0, s - radius):min(length, s + radius + 1)] = 1.0
    elif mode == 'wireless':
        if regions is None:
            raise TSRErrorHandler.invalid_argument("el modo wireless requiere regiones de separación")
        for a, b in regions:
            a, b = max(0, int(a)), min(length - 1, int(b))
            if a <= b:
                y[a:b + 1] = 1.0
    else:
        raise TSRErrorHandler.invalid_argument(f"modo desconocido: {mode}")
    return y


def loss_sp(p, y_hat) -> Tuple[float, np.ndarray]:
    """BCE medio sobre posiciones; gradiente (p - ŷ) / (p (1 - p)) / L"""
    p = _as_array(p)
    y = np.asarray(y_hat, dtype=np.float64)
    _check_same_shape(p, y, "loss_sp")
    if p.size == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, EPS, 1.0 - EPS)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = (pc - y) / (pc * (1.0 - pc)) / p.size
    grad = np.where((p >= EPS) & (p <= 1.0 - EPS), grad, 0.0)
    return float(loss), grad


def loss_delta(pred, target, mode: str = 'abs') -> Tuple[float, np.ndarray]:
    """
    Pérdida de desplazamientos promediada sobre N líneas × N_k keypoints

    abs: norma ℓ2 de cada desplazamiento escalar (valor absoluto), subgradiente 0 en igualdad.
    squared: error cuadrático.
    """
    a = _as_array(pred)
    b = _as_array(target)
    _check_same_shape(a, b, "loss_delta")
    if a.size == 0:
        return 0.0, np.zeros_like(a)
    d = a - b
    if mode == 'abs':
        return float(np.mean(np.abs(d))), np.sign(d) / d.size
    if mode == 'squared':
        return float(np.mean(d * d)), 2.0 * d / d.size
    raise TSRErrorHandler.invalid_argument(f"modo de pérdida de desplazamiento desconocido: {mode}")


def _reduce(per_element: np.ndarray, class_axis: Optional[int]) -> Tuple[float, float]:
    """Suma sobre el eje de clases (si existe) y promedio sobre el resto; devuelve (valor, normalizador)"""
    if class_axis is None:
        return float(np.mean(per_element)), float(per_element.size)
    summed = np.sum(per_element, axis=class_axis)
    return float(np.mean(summed)), float(summed.size)


def _true_class_prob(p: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pc = np.clip(p, EPS, 1.0 - EPS)
    sign = np.where(y >= 0.5, 1.0, -1.0)
    pt = np.where(y >= 0.5, pc, 1.0 - pc)
    inside = (p >= EPS) & (p <= 1.0 - EPS)
    return pt, sign, inside


def cross_entropy(p, y_hat, class_axis: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """Entropía cruzada uno-contra-resto con la misma reducción que focal_loss"""
    p = _as_array(p)
    y = np.asarray(y_hat, dtype=np.float64)
    _check_same_shape(p, y, "cross_entropy")
    pt, sign, inside = _true_class_prob(p, y)
    loss, norm = _reduce(-np.log(pt), class_axis)
    grad = np.where(inside, -sign / pt / norm, 0.0)
    return loss, grad


def focal_loss(p, y_hat, gamma: float = 2.0, alpha: float = 0.25,
               class_axis: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """
    Focal loss -α (1 - p_t)^γ log p_t

    Con class_axis (mapa de acciones M×N×4) se suma sobre las cuatro
    acciones uno-contra-resto y se promedia sobre los grids; sin él se
    promedia sobre todos los elementos (P^sg).
    """
    p = _as_array(p)
    y = np.asarray(y_hat, dtype=np.float64)
    _check_same_shape(p, y, "focal_loss")
    if gamma < 0 or alpha <= 0:
        raise TSRErrorHandler.invalid_argument(f"parámetros focales inválidos γ={gamma}, α={alpha}")
    pt, sign, inside = _true_class_prob(p, y)
    log_pt = np.log(pt)
    one_minus = 1.0 - pt
    loss, norm = _reduce(-(alpha * one_minus ** gamma * log_pt), class_axis)
    if gamma > 0:
        d_pt = alpha * (gamma * one_minus ** (gamma - 1.0) * log_pt - one_minus ** gamma / pt)
    else:
        d_pt = -alpha / pt
    grad = np.where(inside, sign * d_pt / norm, 0.0)
    return loss, grad


@dataclass
class LossReport:
    """Términos de la pérdida total y gradientes por predicción"""
    l_sp_row: float
    l_sp_col: float
    l_delta_row: float
    l_delta_col: float
    l_ma: float
    l_sg: float
    total: float
    gradients: Dict[str, np.ndarray] = field(default_factory=dict)

    def terms(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in LOSS_TERMS}

    def to_dict(self) -> Dict[str, float]:
        return {**self.terms(), 'total': self.total}


def total_loss(parts: Mapping[str, float], gradients: Mapping[str, np.ndarray] = None) -> LossReport:
    """Suma sin pesos de los seis términos"""
    missing = [name for name in LOSS_TERMS if name not in parts]
    if missing:
        raise TSRErrorHandler.invalid_argument(f"faltan términos de pérdida: {missing}", missing=missing)
    values = {name: float(parts[name]) for name in LOSS_TERMS}
    negative = {k: v for k, v in values.items() if not v >= 0.0}
    if negative:
        raise TSRErrorHandler.invariant(f"términos de pérdida negativos: {negative}", terms=negative)
    # Orden canónico: la suma no depende del orden de entrada
    total = float(sum(values[name] for name in LOSS_TERMS))
    return LossReport(total=total, gradients=dict(gradients or {}), **values)


def loss_report(predictions: Mapping[str, np.ndarray], targets: Mapping[str, np.ndarray],
                gamma: float = 2.0, alpha: float = 0.25, offset_loss: str = 'abs') -> LossReport:
    """
    Evalúa los seis términos entre predicciones y objetivos

    Claves: row_start, col_start, row_offsets, col_offsets, start_grid, actions.
    """
    required = ('row_start', 'col_start', 'row_offsets', 'col_offsets', 'start_grid', 'actions')
    for source, mapping in (('predictions', predictions), ('targets', targets)):
        missing = [k for k in required if k not in mapping]
        if missing:
            raise TSRErrorHandler.invalid_argument(f"{source}: faltan {missing}", missing=missing)
    parts, grads = {}, {}
    parts['l_sp_row'], grads['row_start'] = loss_sp(predictions['row_start'], targets['row_start'])
    parts['l_sp_col'], grads['col_start'] = loss_sp(predictions['col_start'], targets['col_start'])
    parts['l_delta_row'], grads['row_offsets'] = loss_delta(
        predictions['row_offsets'], targets['row_offsets'], offset_loss)
    parts['l_delta_col'], grads['col_offsets'] = loss_delta(
        predictions['col_offsets'], targets['col_offsets'], offset_loss)
    parts['l_sg'], grads['start_grid'] = focal_loss(
        predictions['start_grid'], targets['start_grid'], gamma, alpha)
    parts['l_ma'], grads['actions'] = focal_loss(
        predictions['actions'], targets['actions'], gamma, alpha, class_axis=-1)
    return total_loss(parts, grads)


def fd_gradcheck(loss_op: Callable[[np.ndarray], Tuple[float, np.ndarray]],
                 inputs: np.ndarray, h: float = 1e-6) -> float:
    """Máximo error relativo entre el gradiente analítico y diferencias centrales"""
    if h <= 0:
        raise TSRErrorHandler.invalid_argument(f"h debe ser positivo: {h}")
    x = np.array(inputs, dtype=np.float64)
    _, analytic = loss_op(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        plus, _ = loss_op(x.copy())
        flat[k] = orig - h
        minus, _ = loss_op(x.copy())
        flat[k] = orig
        num_flat[k] = (plus - minus) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0


def _random_instance(family: str, rng: np.random.Generator,
                     gamma: float, alpha: float) -> Tuple[Callable, np.ndarray]:
    if family == 'start_point':
        n = int(rng.integers(4, 24))
        y = (rng.random(n) < 0.3).astype(np.float64)
        return (lambda x: loss_sp(x, y)), rng.uniform(0.05, 0.95, n)
    if family == 'offset':
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 9)))
        target = rng.normal(0.0, 4.0, shape)
        # Lejos del punto no diferenciable |d| = 0
        d = rng.uniform(0.1, 3.0, shape) * rng.choice([-1.0, 1.0], shape)
        return (lambda x: loss_delta(x, target, 'abs')), target + d
    if family == 'start_grid':
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        y = (rng.random(shape) < 0.4).astype(np.float64)
        return (lambda x: focal_loss(x, y, gamma, alpha)), rng.uniform(0.05, 0.95, shape)
    if family == 'merge_action':
        m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        y = np.eye(4)[rng.integers(0, 4, (m, n))]
        return (lambda x: focal_loss(x, y, gamma, alpha, class_axis=-1)), rng.uniform(0.05, 0.95, (m, n, 4))
    raise TSRErrorHandler.invalid_argument(f"familia desconocida: {family}")


def gradcheck_suite(trials: int = 100, seed: int = 0, gamma: float = 2.0, alpha: float = 0.25,
                    h: float = 1e-6, corrupt: Optional[str] = None) -> Dict[str, float]:
    """
    Peor error relativo por familia de pérdida sobre `trials` instancias aleatorias

    corrupt escala el gradiente analítico de una familia (comprobación del arnés).
    """
    if corrupt is not None and corrupt not in GRADCHECK_FAMILIES:
        raise TSRErrorHandler.invalid_argument(f"familia desconocida: {corrupt}")
    rng = np.random.default_rng(seed)
    worst = {}
    for family in GRADCHECK_FAMILIES:
        errors = []
        for _ in range(trials):
            op, x = _random_instance(family, rng, gamma, alpha)
            if family == corrupt:
                op = (lambda f: (lambda v: (f(v)[0], f(v)[1] * 1.01)))(op)
            errors.append(fd_gradcheck(op, x, h))
        worst[family] = max(errors) if errors else 0.0
    return worst


def check_gradients(worst: Mapping[str, float], tolerance: float = GRADCHECK_TOLERANCE):
    """Lanza un error de aceptación si alguna familia supera la tolerancia"""
    failing = {k: v for k, v in worst.items() if not v < tolerance}
    if failing:
        raise TSRError(
            f"gradcheck fallido: {failing}", TSRErrorType.ACCEPTANCE,
            error_code='gradcheck', details={'worst': dict(worst), 'tolerance': tolerance})
