"""Free additive convolution by the subordination fixed point.

For C = A + B with A, B free, G_C(z) = G_A(w_A(z)) = G_B(w_B(z)) where w_A solves

    w = z + H_B(z + H_A(w)),   H(w) = 1/G(w) - w,

and w_B = z + H_A(w_A).  The iteration is damped and warm-started along
contiguous grid blocks; a block always starts from w = z so results do not
depend on how many workers evaluate the blocks.
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from config import settings
from services.errors import (
    AtomicMeasure,
    FreeSpecError,
    GridMismatch,
    LeftUpperHalfPlane,
    LowerHalfPlane,
    NoConvergence,
    ZeroCauchy,
)
from services.measures import AnalyticMeasure
from services.monitoring import monitoring_service
from services.runner import run_blocks
from services.transforms import (
    CauchyEvaluator,
    DensityCurve,
    GridEvaluation,
    Spectrum,
    as_evaluator,
    pointwise,
    stieltjes_invert,
    support,
)

logger = logging.getLogger(__name__)

# tolerance on the subordination invariants, relative to max(1, |w|)
CONSISTENCY_FACTOR = 1e3
CONSISTENCY_FLOOR = 1e-9


@dataclass(frozen=True)
class FixedPointConfig:
    damping: float = 0.5
    tol: float = 1e-12
    max_iter: int = 10000
    min_im: float = 1e-8
    clamp_budget: int = 100

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.min_im > 0:
            raise ValueError(f"min_im must be positive, got {self.min_im}")

    @classmethod
    def from_settings(cls, **overrides) -> "FixedPointConfig":
        values = {
            "damping": settings.fp_damping,
            "tol": settings.fp_tol,
            "max_iter": settings.fp_max_iter,
            "min_im": settings.fp_min_im,
            "clamp_budget": settings.fp_clamp_budget,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class SubordinationResult:
    omega_a: complex
    omega_b: complex
    g_c: complex
    iterations: int
    residual: float
    clamps: int = 0
    consistency: float = 0.0  # |1/G_B(w_B) - 1/G_A(w_A)|


def _h(g: CauchyEvaluator, w: complex) -> complex:
    value = complex(g(w))
    if abs(value) < 1e-300:
        raise ZeroCauchy(f"Cauchy transform vanishes at {w}")
    return 1.0 / value - w


def _slack(cfg: FixedPointConfig, *omegas: complex) -> float:
    return max(CONSISTENCY_FACTOR * cfg.tol, CONSISTENCY_FLOOR) * max(1.0, *(abs(w) for w in omegas))


def _operand(m) -> CauchyEvaluator:
    if isinstance(m, Spectrum):
        raise AtomicMeasure("empirical spectra are atomic; convolve catalog measures instead")
    return as_evaluator(m)


def _solve(g_a: CauchyEvaluator, g_b: CauchyEvaluator, z: complex, cfg: FixedPointConfig,
           omega0: Optional[complex] = None) -> SubordinationResult:
    if not z.imag > 0:
        raise LowerHalfPlane(f"subordination needs Im z > 0, got {z}")
    omega = z if omega0 is None else omega0
    clamps = 0
    residual = float("inf")

    for iteration in range(1, cfg.max_iter + 1):
        inner = z + _h(g_a, omega)
        if inner.imag < cfg.min_im:
            inner = complex(inner.real, cfg.min_im)
            clamps += 1
        target = z + _h(g_b, inner)
        residual = abs(target - omega)
        if residual <= cfg.tol * max(1.0, abs(omega)):
            omega = target
            break
        omega = (1 - cfg.damping) * omega + cfg.damping * target
        if omega.imag < cfg.min_im:
            omega = complex(omega.real, cfg.min_im)
            clamps += 1
        if clamps > cfg.clamp_budget:
            raise NoConvergence(iteration, residual, f"clamp budget exceeded at z = {z}")
    else:
        raise NoConvergence(cfg.max_iter, residual)

    omega_b = z + _h(g_a, omega)
    slack = _slack(cfg, omega, omega_b)
    if min(omega.imag, omega_b.imag) < z.imag - slack:
        raise LeftUpperHalfPlane(
            f"subordination functions below Im z at z = {z}: Im w_A = {omega.imag:.3e}, Im w_B = {omega_b.imag:.3e}")
    g_c = complex(g_a(omega))
    g_b_value = complex(g_b(omega_b))
    if g_c == 0 or g_b_value == 0:
        raise ZeroCauchy(f"Cauchy transform vanishes on a subordination route at z = {z}")
    # both routes must give the same G_C; compared as 1/G so edge points are not penalised
    consistency = abs(1.0 / g_b_value - 1.0 / g_c)
    if consistency > slack:
        raise NoConvergence(iteration, residual,
                            f"subordination routes disagree by {consistency:.2e} at z = {z}")
    return SubordinationResult(omega_a=omega, omega_b=omega_b, g_c=g_c, iterations=iteration,
                               residual=residual, clamps=clamps, consistency=consistency)


def subordination_solve(ma, mb, z, cfg: FixedPointConfig = None,
                        omega0: Optional[complex] = None) -> SubordinationResult:
    """Solve the subordination fixed point for ma ⊞ mb at one point z"""
    cfg = cfg or FixedPointConfig.from_settings()
    return _solve(_operand(ma), _operand(mb), complex(z), cfg, omega0)


class SubordinationCauchy(CauchyEvaluator):
    """Cauchy transform of ma ⊞ mb; operands may themselves be evaluators"""

    def __init__(self, ma, mb, cfg: FixedPointConfig = None, block_size: int = None):
        self.g_a = _operand(ma)
        self.g_b = _operand(mb)
        self.cfg = cfg or FixedPointConfig.from_settings()
        self.block_size = block_size or settings.block_size

    def solve(self, z: complex, omega0: Optional[complex] = None) -> SubordinationResult:
        return _solve(self.g_a, self.g_b, complex(z), self.cfg, omega0)

    def __call__(self, z):
        return pointwise(lambda point: self.solve(point).g_c, z)

    def _solve_block(self, points: Sequence[complex], start: int) -> List[Tuple]:
        out = []
        omega = None
        for offset, z in enumerate(points):
            try:
                result = self.solve(z, omega)
                omega = result.omega_a
                out.append((result.g_c, True, result.iterations, result.clamps, None))
            except FreeSpecError as e:
                omega = None
                iterations = getattr(e, "iterations", 0)
                out.append((0j, False, iterations, 0, (start + offset, str(e))))
        return out

    def evaluate_grid(self, points: np.ndarray, threads: int = 1) -> GridEvaluation:
        points = np.asarray(points, dtype=complex).ravel()
        started = time.time()
        rows = run_blocks(self._solve_block, [complex(p) for p in points], threads, self.block_size)
        values = np.array([row[0] for row in rows], dtype=complex)
        valid = np.array([row[1] for row in rows], dtype=bool)
        iterations = np.array([row[2] for row in rows], dtype=int)
        errors = [row[4] for row in rows if row[4] is not None]
        monitoring_service.record_solver_metrics(
            "subordination", time.time() - started, points.size,
            iterations=int(iterations.sum()), failed=len(errors), clamps=sum(row[3] for row in rows),
        )
        return GridEvaluation(values=values, valid=valid, iterations=iterations, errors=errors)


def free_convolve_cauchy_many(measures: Sequence, cfg: FixedPointConfig = None) -> CauchyEvaluator:
    """Nested evaluator of m_1 ⊞ m_2 ⊞ ... ⊞ m_k"""
    if len(measures) < 2:
        raise ValueError("need at least two measures to convolve")
    evaluator = SubordinationCauchy(measures[0], measures[1], cfg)
    for m in measures[2:]:
        evaluator = SubordinationCauchy(evaluator, m, cfg)
    return evaluator


def free_convolve_density(ma, mb, grid, eps: float = None, cfg: FixedPointConfig = None,
                          threads: int = 1) -> DensityCurve:
    """Density of ma ⊞ mb: subordination at x + i eps/2 and x + i eps, Richardson-extrapolated"""
    eps = eps or settings.eps_solved
    evaluator = SubordinationCauchy(ma, mb, cfg)
    logger.info(f"Free convolution on {len(grid)} points, eps={eps}")
    curve = stieltjes_invert(evaluator, grid, eps / 2, extrapolate=True, threads=threads)
    if curve.errors:
        logger.warning(f"Free convolution: {len(curve.errors)} points did not converge")
    return curve


def predicted_support(ma: AnalyticMeasure, mb: AnalyticMeasure) -> Tuple[float, float]:
    """Minkowski sum of the supports, which bounds the support of ma ⊞ mb"""
    lo_a, hi_a = support(ma)
    lo_b, hi_b = support(mb)
    return lo_a + lo_b, hi_a + hi_b


def padded_grid(lo: float, hi: float, n: int, padding: float = 0.1) -> np.ndarray:
    width = hi - lo
    return np.linspace(lo - padding * width, hi + padding * width, n)


def _uniform_step(grid: np.ndarray) -> float:
    steps = np.diff(grid)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise GridMismatch("classical convolution needs uniform grids")
    return float(steps[0])


def classical_convolve_density(ca: DensityCurve, cb: DensityCurve, grid) -> DensityCurve:
    """Density of A + B for commuting (independent) A and B: discrete convolution, mass 1"""
    grid = np.asarray(grid, dtype=float)
    h = _uniform_step(ca.grid)
    if abs(_uniform_step(cb.grid) - h) > 1e-9 * h:
        raise GridMismatch("input curves must share the grid spacing")
    if grid.size > 1 and abs(_uniform_step(grid) - h) > 1e-9 * h:
        raise GridMismatch("output grid must use the input spacing")

    values = np.convolve(ca.values, cb.values) * h
    start = ca.grid[0] + cb.grid[0]
    offset = (grid[0] - start) / h
    if abs(offset - round(offset)) > 1e-6:
        raise GridMismatch("output grid is not aligned with the convolution lattice")
    lattice = start + h * np.arange(values.size)
    out = np.interp(grid, lattice, values, left=0.0, right=0.0)

    mass = integrate.trapezoid(out, grid)
    if mass > 0:
        out = out / mass
    return DensityCurve(grid=grid, values=out)
