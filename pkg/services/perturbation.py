"""Perturbative Cauchy transforms for H = A + alpha * B.

B is either a unit-variance semicircle (free Gaussian perturbation) or the
arcsine law (a hopping chain).  The series are expressed through G_A and its
z-derivatives, so the base needs analytic derivatives up to the order used.
"""
import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from config import settings
from services.errors import RegimeWarning, UnsupportedOrder, ZeroCauchy
from services.measures import AnalyticMeasure, MeasureKind
from services.transforms import (
    CauchyEvaluator,
    DensityCurve,
    FunctionCauchy,
    MeasureCauchy,
    require_upper,
    as_evaluator,
    edge_root,
    scaled,
    stieltjes_invert,
    support,
)

logger = logging.getLogger(__name__)

MAX_HALVINGS = 64


class PerturbationKind(str, Enum):
    SEMICIRCLE = "semicircle"
    ARCSINE = "arcsine"


SUPPORTED_ORDERS = {
    PerturbationKind.SEMICIRCLE: (0, 1, 2),
    PerturbationKind.ARCSINE: (0, 1, 2, 3),
}


@dataclass(frozen=True)
class PerturbationSpec:
    base: AnalyticMeasure
    kind: PerturbationKind
    alpha: float
    order: int

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.order not in SUPPORTED_ORDERS[self.kind]:
            raise UnsupportedOrder(f"{self.kind.value} perturbation supports orders "
                                   f"{SUPPORTED_ORDERS[self.kind]}, got {self.order}")


def _derivatives(base, z, up_to: int):
    evaluator = as_evaluator(base)
    values = [np.asarray(evaluator(z), dtype=complex)]
    for n in range(1, up_to + 1):
        values.append(np.asarray(evaluator.derivative(z, n), dtype=complex))
    return values


def _out(values):
    values = np.asarray(values)
    return values[()] if values.ndim == 0 else values


def g_pert_semicircle(base, alpha: float, order: int, z):
    """G_A corrected for a semicircle perturbation of strength alpha (orders 0-2)"""
    if order not in (0, 1, 2):
        raise UnsupportedOrder(f"semicircle perturbation supports orders 0, 1, 2, got {order}")
    z = require_upper(z)
    d = _derivatives(base, z, order)
    if order == 0 or alpha == 0:
        return _out(d[0])
    g = d[0]
    first = g - alpha ** 2 * g * d[1]
    if order == 1:
        return _out(first)
    return _out(first + alpha ** 4 / 2 * first ** 2 * d[2])


def _continued_root(g, alpha: float) -> np.ndarray:
    """sqrt(1 + 4 alpha^2 g^2) continued from alpha = 0 by repeated doubling of alpha"""
    x = 4 * alpha ** 2 * np.asarray(g, dtype=complex) ** 2
    magnitude = float(np.max(np.abs(x))) if x.size else 0.0
    halvings = 0
    while magnitude / 4 ** halvings >= 0.25 and halvings < MAX_HALVINGS:
        halvings += 1
    root = np.sqrt(1 + x / 4 ** halvings)
    for j in range(halvings - 1, -1, -1):
        candidate = np.sqrt(1 + x / 4 ** j)
        root = np.where(np.abs(candidate - root) <= np.abs(candidate + root), candidate, -candidate)
    return root


def _arcsine_kernel(g: np.ndarray, alpha: float) -> np.ndarray:
    if np.any(np.abs(g) < 1e-300):
        raise ZeroCauchy("base Cauchy transform vanishes")
    return (-1 + _continued_root(g, alpha)) / g


def g_pert_arcsine_first(base, alpha: float, z):
    """First-order correction for an arcsine perturbation of strength alpha"""
    z = require_upper(z)
    g, dg = _derivatives(base, z, 1)
    if alpha == 0:
        return _out(g)
    return _out(g - _arcsine_kernel(g, alpha) * dg)


def g_pert_arcsine_series(base, alpha: float, n_max: int, z):
    """
    Derivative series for an arcsine perturbation truncated at n <= n_max.

    Each order feeds its output into the kernel of the next one, starting
    from G_A itself.
    """
    if n_max not in (1, 2, 3):
        raise UnsupportedOrder(f"arcsine series supports n_max 1, 2, 3, got {n_max}")
    z = require_upper(z)
    d = _derivatives(base, z, n_max)
    if alpha == 0:
        return _out(d[0])
    current = d[0]
    for truncation in range(1, n_max + 1):
        x = _arcsine_kernel(current, alpha)
        total = np.zeros_like(current)
        for n in range(truncation + 1):
            total = total + (-1) ** n / math.factorial(n) * d[n] * x ** n
        current = total
    return _out(current)


def anderson_highJ_cauchy(alpha: float, order: int, z):
    """Arcsine chain plus weak semicircle disorder, in units of the hopping J (alpha = 1/J)"""
    if order not in (1, 2):
        raise UnsupportedOrder(f"high-J Anderson closed form supports orders 1, 2, got {order}")
    z = require_upper(z)
    s = edge_root(z, 0.0, 2.0)
    first = (1 / s) * (1 + alpha ** 2 * z / s ** 3)
    if order == 1:
        return _out(first)
    return _out(first + alpha ** 4 / 2 * first ** 2 * 2 * (2 + z ** 2) / s ** 5)


def rp_alpha(gamma: float, n: int) -> float:
    return float(n) ** (-gamma / 2)


def rp_cauchy(sigma: float, gamma: float, n: int, order: int, z):
    """Rosenzweig-Porter: Gaussian diagonal plus N^(-gamma/2) GOE"""
    if n < 2:
        raise ValueError(f"N must be >= 2, got {n}")
    if gamma <= 1:
        message = f"gamma = {gamma} is in the ergodic phase; the perturbative series does not apply"
        logger.warning(message)
        warnings.warn(message, RegimeWarning, stacklevel=2)
    return g_pert_semicircle(AnalyticMeasure.gaussian(sigma), rp_alpha(gamma, n), order, z)


class PerturbationCauchy(CauchyEvaluator):
    def __init__(self, spec: PerturbationSpec):
        self.spec = spec
        self._base = MeasureCauchy(spec.base)

    def __call__(self, z):
        spec = self.spec
        if spec.kind == PerturbationKind.SEMICIRCLE:
            return g_pert_semicircle(self._base, spec.alpha, spec.order, z)
        if spec.order == 0:
            return self._base(z)
        if spec.order == 1:
            return g_pert_arcsine_first(self._base, spec.alpha, z)
        return g_pert_arcsine_series(self._base, spec.alpha, spec.order, z)


def edge_band_mask(grid: np.ndarray, edges, delta: float) -> np.ndarray:
    """True where a grid point sits within delta of one of the edges"""
    grid = np.asarray(grid, dtype=float)
    mask = np.zeros(grid.shape, dtype=bool)
    for edge in edges:
        mask |= np.abs(grid - edge) <= delta
    return mask


def _base_edges(base: AnalyticMeasure):
    if base.kind == MeasureKind.GAUSSIAN:
        return ()
    return support(base)


def perturbed_density(spec: PerturbationSpec, grid, eps: float = None,
                      delta: Optional[float] = None) -> DensityCurve:
    """Density of the perturbed Cauchy transform; points near base edges are flagged invalid"""
    eps = eps or settings.eps_closed_form
    delta = settings.edge_delta if delta is None else delta
    curve = stieltjes_invert(PerturbationCauchy(spec), grid, eps)
    if spec.alpha > 0 and spec.order > 0:
        curve.valid &= ~edge_band_mask(curve.grid, _base_edges(spec.base), delta)
    return curve


PRESETS = ("anderson-high-j", "anderson-low-j", "anderson-gaussian", "rp")


@dataclass
class PresetModel:
    evaluator: CauchyEvaluator
    edges: tuple = ()
    scale: float = 1.0  # reported units per model unit


def preset_evaluator(preset: str, J: float = None, sigma: float = None, gamma: float = None,
                     n: int = None, order: int = None) -> PresetModel:
    """
    Evaluator, edge locations and unit scale for a figure preset.

    anderson-high-j reports the unscaled Hamiltonian: G_H(z) = (1/J) G(z/J).
    """
    if preset == "anderson-high-j":
        J = 10.0 if J is None else J
        spec = PerturbationSpec(AnalyticMeasure.arcsine(), PerturbationKind.SEMICIRCLE, 1.0 / J,
                                2 if order is None else order)
        return PresetModel(scaled(PerturbationCauchy(spec), J), (-2.0 * J, 2.0 * J), J)
    if preset == "anderson-low-j":
        J = 0.2 if J is None else J
        spec = PerturbationSpec(AnalyticMeasure.semicircle(1.0), PerturbationKind.ARCSINE, J,
                                1 if order is None else order)
        return PresetModel(PerturbationCauchy(spec), (-2.0, 2.0))
    if preset == "anderson-gaussian":
        J = 0.2 if J is None else J
        spec = PerturbationSpec(AnalyticMeasure.gaussian(1.0 if sigma is None else sigma),
                                PerturbationKind.ARCSINE, J, 1 if order is None else order)
        return PresetModel(PerturbationCauchy(spec))
    if preset == "rp":
        n = 1000 if n is None else n
        gamma = 1.5 if gamma is None else gamma
        sigma = 2.0 / math.sqrt(n) if sigma is None else sigma
        order = 2 if order is None else order
        return PresetModel(FunctionCauchy(lambda z: rp_cauchy(sigma, gamma, n, order, z)))
    raise ValueError(f"unknown preset '{preset}', expected one of {PRESETS}")
