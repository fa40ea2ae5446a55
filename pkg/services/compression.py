"""Free compression and decompression of spectral measures.

Compressing by alpha = n_s / n (the law of a Haar-rotated n_s x n_s principal
block) scales the R-transform argument, R_alpha(w) = R(alpha w).  For Cauchy
transforms this is the self-consistent relation

    alpha * G_alpha(z) = G(z + theta / G_alpha(z)),   theta = (1 - alpha) / alpha,

which also covers decompression (alpha > 1, theta < 0).
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config import settings
from services.convolution import FixedPointConfig, SubordinationCauchy
from services.errors import (
    FreeSpecError,
    LeftUpperHalfPlane,
    LowerHalfPlane,
    NoConvergence,
    StencilFailure,
    ThetaOutOfRange,
)
from services.measures import AnalyticMeasure, MeasureKind
from services.monitoring import monitoring_service
from services.runner import run_blocks
from services.transforms import (
    CauchyEvaluator,
    FunctionCauchy,
    GridEvaluation,
    MeasureCauchy,
    select_branch,
    as_evaluator,
    cauchy_eval,
    edge_root,
    pointwise,
    r_eval,
    require_upper,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompressionSpec:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def theta(self) -> float:
        return (1.0 - self.alpha) / self.alpha


def compress_r(m: AnalyticMeasure, alpha: float, w):
    """R-transform of the compressed measure: R(alpha w)"""
    CompressionSpec(alpha)
    return r_eval(m, alpha * np.asarray(w, dtype=complex))


def _compress_point(g: CauchyEvaluator, alpha: float, z: complex, cfg: FixedPointConfig,
                    seed: Optional[complex] = None) -> Tuple[complex, int, int]:
    """(G_alpha(z), iterations, clamps) by damped iteration"""
    if not z.imag > 0:
        raise LowerHalfPlane(f"compression needs Im z > 0, got {z}")
    if alpha == 1:
        return complex(g(z)), 0, 0
    theta = CompressionSpec(alpha).theta
    current = complex(g(z)) / alpha if seed is None else seed
    clamps = 0
    residual = float("inf")

    for iteration in range(1, cfg.max_iter + 1):
        argument = z + theta / current
        if argument.imag < cfg.min_im:
            argument = complex(argument.real, cfg.min_im)
            clamps += 1
            if clamps > cfg.clamp_budget:
                raise LeftUpperHalfPlane(f"argument clamp budget exceeded at z = {z}")
        target = complex(g(argument)) / alpha
        residual = abs(target - current)
        if residual <= cfg.tol * max(1.0, abs(current)):
            return target, iteration, clamps
        current = (1 - cfg.damping) * current + cfg.damping * target
    raise NoConvergence(cfg.max_iter, residual)


def compress_cauchy_fp(g, alpha: float, z, cfg: FixedPointConfig = None) -> complex:
    """Cauchy transform of the alpha-compressed law of g at one point"""
    cfg = cfg or FixedPointConfig.from_settings()
    value, _, _ = _compress_point(as_evaluator(g), alpha, complex(z), cfg)
    return value


class CompressedCauchy(CauchyEvaluator):
    """Evaluator of the alpha-compression of another evaluator"""

    def __init__(self, g, alpha: float, cfg: FixedPointConfig = None, block_size: int = None):
        self.g = as_evaluator(g)
        self.alpha = CompressionSpec(alpha).alpha
        self.cfg = cfg or FixedPointConfig.from_settings()
        self.block_size = block_size or settings.block_size

    def __call__(self, z):
        return pointwise(lambda point: _compress_point(self.g, self.alpha, point, self.cfg)[0], z)

    def _solve_block(self, points: Sequence[complex], start: int) -> List[Tuple]:
        out = []
        seed = None
        for offset, z in enumerate(points):
            try:
                value, iterations, clamps = _compress_point(self.g, self.alpha, z, self.cfg, seed)
                seed = value
                out.append((value, True, iterations, clamps, None))
            except FreeSpecError as e:
                seed = None
                out.append((0j, False, getattr(e, "iterations", 0), 0, (start + offset, str(e))))
        return out

    def evaluate_grid(self, points: np.ndarray, threads: int = 1) -> GridEvaluation:
        points = np.asarray(points, dtype=complex).ravel()
        started = time.time()
        rows = run_blocks(self._solve_block, [complex(p) for p in points], threads, self.block_size)
        errors = [row[4] for row in rows if row[4] is not None]
        iterations = np.array([row[2] for row in rows], dtype=int)
        monitoring_service.record_solver_metrics(
            "compression", time.time() - started, points.size,
            iterations=int(iterations.sum()), failed=len(errors), clamps=sum(row[3] for row in rows),
        )
        return GridEvaluation(
            values=np.array([row[0] for row in rows], dtype=complex),
            valid=np.array([row[1] for row in rows], dtype=bool),
            iterations=iterations,
            errors=errors,
        )


def _out(values):
    values = np.asarray(values)
    return values[()] if values.ndim == 0 else values


def compress_km_closed(eta: float, alpha: float, z):
    """Cauchy transform of the alpha-compressed Kesten-McKay law"""
    if eta < 2:
        raise ValueError(f"eta must be >= 2, got {eta}")
    if not 0 < alpha < eta:
        raise ValueError(f"alpha must lie in (0, eta), got {alpha}")
    z = require_upper(z)
    s = edge_root(z, 0.0, 2 * math.sqrt(alpha * (eta - alpha)))
    denominator = 2 * alpha * (eta ** 2 - z ** 2)
    return _out(select_branch((z * (eta - 2 * alpha) - eta * s) / denominator,
                               (z * (eta - 2 * alpha) + eta * s) / denominator, z))


def compress_km_density(eta: float, alpha: float, lam):
    x = np.asarray(lam, dtype=float)
    radicand = np.clip(4 * alpha * (eta - alpha) - x ** 2, 0, None)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(radicand > 0, eta * np.sqrt(radicand) / (2 * np.pi * alpha * (eta ** 2 - x ** 2)), 0.0)
    return _out(np.clip(np.where(np.isfinite(rho), rho, 0.0), 0.0, None))


def km_compressed_edge(eta: float, alpha: float) -> float:
    return 2 * math.sqrt(alpha * (eta - alpha))


def compress_bernoulli_closed(alpha: float, z):
    """Cauchy transform of the alpha-compressed Bernoulli law (alpha in (0, 1])"""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    z = require_upper(z)
    s = edge_root(z, 0.0, 2 * math.sqrt(alpha * (1 - alpha)))
    denominator = 2 * alpha * (z ** 2 - 1)
    return _out(select_branch((z * (2 * alpha - 1) + s) / denominator,
                               (z * (2 * alpha - 1) - s) / denominator, z))


def bernoulli_compressed_edge(alpha: float) -> float:
    return 2 * math.sqrt(alpha * (1 - alpha))


def compress_orthopoly_closed(a: float, b: float, alpha: float, z):
    """Compression rescales both recursion parameters: a -> a alpha, b -> b alpha"""
    CompressionSpec(alpha)
    return cauchy_eval(AnalyticMeasure.orthopoly(a * alpha, b * alpha), z)


def compress_first_order(g, theta: float, z):
    """(theta + 1)(G + theta G'/G), the leading term in theta"""
    if not 0 <= theta < 1:
        raise ThetaOutOfRange(f"first-order compression needs 0 <= theta < 1, got {theta}")
    g = as_evaluator(g)
    z = require_upper(z)
    value = np.asarray(g(z), dtype=complex)
    if theta == 0:
        return _out(value)
    derivative = np.asarray(g.derivative(z, 1), dtype=complex)
    return _out((theta + 1) * (value + theta * derivative / value))


def pde_residual(g2: Callable[[float, complex], complex], u: float, z,
                 h_u: float = 1e-5, h_z: float = 1e-5) -> float:
    """|dG/du + G + (dG/dz)/G| by central differences, alpha = exp(u)"""
    z = complex(z)
    if z.imag < 0.1:
        raise StencilFailure(f"stencil needs Im z >= 0.1, got {z}")
    try:
        center = complex(g2(u, z))
        du = (complex(g2(u + h_u, z)) - complex(g2(u - h_u, z))) / (2 * h_u)
        dz = (complex(g2(u, z + h_z)) - complex(g2(u, z - h_z))) / (2 * h_z)
    except (FreeSpecError, ArithmeticError, ValueError) as e:
        raise StencilFailure(f"stencil evaluation failed at u={u}, z={z}: {e}") from e
    if not all(np.isfinite(v) for v in (center, du, dz)) or center == 0:
        raise StencilFailure(f"non-finite stencil values at u={u}, z={z}")
    return float(abs(du + center + dz / center))


def compress_convolved(ma: AnalyticMeasure, mb: AnalyticMeasure, delta: float, alpha: float, z,
                       cfg: FixedPointConfig = None) -> complex:
    """Compression of ma ⊞ (delta * mb), via the subordination evaluator"""
    cfg = cfg or FixedPointConfig.from_settings()
    if delta == 0:
        g = MeasureCauchy(ma)
    else:
        g = SubordinationCauchy(ma, AnalyticMeasure.affine(mb, delta), cfg)
    if alpha == 1:
        return complex(g(complex(z)))
    return compress_cauchy_fp(g, alpha, z, cfg)


def free_power_cauchy(m, t: float, z, cfg: FixedPointConfig = None) -> complex:
    """G of the free convolution power m^(⊞t), t >= 1, as t * (m compressed by 1/t)"""
    if t < 1:
        raise ValueError(f"free convolution power needs t >= 1, got {t}")
    z = complex(z)
    return compress_cauchy_fp(m, 1.0 / t, z / t, cfg) / t


CLOSED_FORMS = ("auto", "km", "bernoulli", "orthopoly", "none")


def compression_evaluator(m: AnalyticMeasure, alpha: float, closed_form: str = "auto",
                          cfg: FixedPointConfig = None) -> Tuple[CauchyEvaluator, str]:
    """Evaluator for the compressed law of m and the closed form actually used"""
    if closed_form not in CLOSED_FORMS:
        raise ValueError(f"closed form must be one of {CLOSED_FORMS}, got '{closed_form}'")
    p = m.params
    eta = None
    if m.kind == MeasureKind.ARCSINE:
        eta = 2.0
    elif m.kind == MeasureKind.KESTEN_MCKAY:
        eta = p.eta

    if closed_form == "auto":
        if eta is not None and alpha < eta:
            closed_form = "km"
        elif m.kind == MeasureKind.BERNOULLI and alpha <= 1:
            closed_form = "bernoulli"
        elif m.kind in (MeasureKind.ORTHOPOLY, MeasureKind.SEMICIRCLE):
            closed_form = "orthopoly"
        else:
            closed_form = "none"

    if closed_form == "km":
        if eta is None:
            raise ValueError("km closed form needs an arcsine or kesten_mckay measure")
        return FunctionCauchy(lambda z: compress_km_closed(eta, alpha, z)), "km"
    if closed_form == "bernoulli":
        if m.kind != MeasureKind.BERNOULLI:
            raise ValueError("bernoulli closed form needs a bernoulli measure")
        return FunctionCauchy(lambda z: compress_bernoulli_closed(alpha, z)), "bernoulli"
    if closed_form == "orthopoly":
        if m.kind == MeasureKind.SEMICIRCLE:
            a, b = 0.0, p.variance
        elif m.kind == MeasureKind.ORTHOPOLY:
            a, b = p.a, p.b
        else:
            raise ValueError("orthopoly closed form needs an orthopoly or semicircle measure")
        return FunctionCauchy(lambda z: compress_orthopoly_closed(a, b, alpha, z)), "orthopoly"
    return CompressedCauchy(MeasureCauchy(m), alpha, cfg), "none"
