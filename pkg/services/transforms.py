"""Closed-form spectral measures and the analytic transform toolbox.

Every Cauchy transform here follows one branch contract: for Im z > 0 the value
has Im G < 0 and G(z) ~ 1/z at infinity.  Square roots of ``(z - x0)^2 - r^2``
are evaluated as ``sqrt(z - x0 - r) * sqrt(z - x0 + r)``, which puts the cut on
the support and behaves like ``z - x0`` at infinity.

Functions accept scalars or numpy arrays of complex points and return the same
shape.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from services.errors import (
    AtomicMeasure,
    DerivativeUnavailable,
    FreeSpecError,
    LowerHalfPlane,
    NoClosedForm,
    PoleAt,
    ZeroCauchy,
)
from services.measures import AnalyticMeasure, MeasureKind

logger = logging.getLogger(__name__)

GAUSSIAN_CUTOFF = 12.0  # quadrature truncation in units of sigma
CONTOUR_POINTS = 64
MAX_MOMENT_ORDER = 40


# Value objects

@dataclass(frozen=True, eq=False)
class Spectrum:
    """Sorted eigenvalues of one matrix"""

    eigenvalues: np.ndarray

    def __post_init__(self):
        values = np.sort(np.asarray(self.eigenvalues, dtype=float).ravel())
        if values.size == 0:
            raise ValueError("spectrum must hold at least one eigenvalue")
        object.__setattr__(self, "eigenvalues", values)

    @property
    def n(self) -> int:
        return int(self.eigenvalues.size)

    def __len__(self) -> int:
        return self.n


@dataclass
class DensityCurve:
    """A density sampled on a strictly increasing grid.

    ``valid`` flags points whose value could not be trusted (solver failure,
    edge singularity); ``errors`` holds ``(index, message)`` pairs for failed
    evaluations.  ``iterations`` is filled by fixed-point evaluators.
    """

    grid: np.ndarray
    values: np.ndarray
    valid: Optional[np.ndarray] = None
    iterations: Optional[np.ndarray] = None
    errors: List[Tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if self.grid.size > 1 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("density values must be finite and non-negative")
        if self.valid is None:
            self.valid = np.ones(self.grid.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def mass(self) -> float:
        return float(integrate.trapezoid(self.values, self.grid))

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if self.grid.size > 1 else 0.0

    @property
    def failed_fraction(self) -> float:
        return float(np.count_nonzero(~self.valid)) / self.grid.size


def uniform_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 2 or not hi > lo:
        raise ValueError(f"grid needs n >= 2 and hi > lo, got {lo}:{hi}:{n}")
    return np.linspace(lo, hi, n)


# Helpers

def require_upper(z) -> np.ndarray:
    points = np.asarray(z, dtype=complex)
    if np.any(~(points.imag > 0)):
        raise LowerHalfPlane(f"Cauchy transform needs Im z > 0, got {z}")
    return points


def _out(values):
    values = np.asarray(values)
    return values[()] if values.ndim == 0 else values


def edge_root(z, center: float, radius: float) -> np.ndarray:
    """sqrt((z - center)^2 - radius^2) with the cut on [center - radius, center + radius]"""
    w = np.asarray(z, dtype=complex) - center
    return np.sqrt(w - radius) * np.sqrt(w + radius)


def select_branch(primary: np.ndarray, alternate: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Enforce Im G < 0, and G ~ 1/z for |z| >= 100"""
    wrong = (primary.imag > 0) & (alternate.imag < primary.imag)
    far = np.abs(z) >= 100
    if np.any(far):
        inv = 1.0 / np.where(far, z, 1.0)
        wrong |= far & (np.abs(alternate - inv) < np.abs(primary - inv))
    return np.where(wrong, alternate, primary)


def pointwise(func: Callable[[complex], complex], z) -> np.ndarray:
    """Apply a scalar complex function over an array of points"""
    points = np.asarray(z, dtype=complex)
    out = np.empty(points.shape, dtype=complex)
    for index in np.ndindex(points.shape):
        out[index] = func(complex(points[index]))
    return _out(out)


def contour_derivative(func: Callable, z, order: int, points: int = CONTOUR_POINTS) -> np.ndarray:
    """n-th derivative by the Cauchy integral formula on a circle of radius Im z / 2"""
    z = np.asarray(z, dtype=complex)
    if order == 0:
        return _out(np.asarray(func(z), dtype=complex))
    radius = z.imag / 2.0
    theta = 2.0 * np.pi * np.arange(points) / points
    ring = np.exp(1j * theta)
    samples = np.asarray(func(z[..., None] + radius[..., None] * ring), dtype=complex)
    coefficient = np.mean(samples * np.exp(-1j * order * theta), axis=-1)
    return _out(math.factorial(order) * coefficient / radius ** order)


# Density, support, atoms

def support(m: AnalyticMeasure) -> Tuple[float, float]:
    """Interval carrying the measure (continuous part plus atoms)"""
    p = m.params
    if m.kind == MeasureKind.SEMICIRCLE:
        r = 2.0 * math.sqrt(p.variance)
        return -r, r
    if m.kind == MeasureKind.ARCSINE:
        return -2.0, 2.0
    if m.kind == MeasureKind.KESTEN_MCKAY:
        r = 2.0 * math.sqrt(p.eta - 1.0)
        return -r, r
    if m.kind == MeasureKind.BERNOULLI:
        return -1.0, 1.0
    if m.kind == MeasureKind.GAUSSIAN:
        return -GAUSSIAN_CUTOFF * p.sigma, GAUSSIAN_CUTOFF * p.sigma
    if m.kind == MeasureKind.ORTHOPOLY:
        r = 2.0 * math.sqrt(p.b)
        lo, hi = p.a - r, p.a + r
        for location, _ in atoms(m):
            lo, hi = min(lo, location), max(hi, location)
        return lo, hi
    if m.kind == MeasureKind.DIRAC:
        return p.c, p.c
    lo, hi = support(p.base)
    ends = sorted((p.scale * lo + p.shift, p.scale * hi + p.shift))
    return ends[0], ends[1]


def atoms(m: AnalyticMeasure) -> List[Tuple[float, float]]:
    """Point masses as (location, mass) pairs"""
    p = m.params
    if m.kind == MeasureKind.BERNOULLI:
        return [(-1.0, 0.5), (1.0, 0.5)]
    if m.kind == MeasureKind.DIRAC:
        return [(p.c, 1.0)]
    if m.kind == MeasureKind.ORTHOPOLY and p.a != 0 and p.b < p.a ** 2:
        return [(-p.b / p.a, 1.0 - p.b / p.a ** 2)]
    if m.kind == MeasureKind.AFFINE:
        return [(p.scale * x + p.shift, w) for x, w in atoms(p.base)]
    return []


def density_eval(m: AnalyticMeasure, lam):
    """Density of the continuous part; 0 outside the support"""
    if m.is_atomic:
        raise AtomicMeasure(f"{m.kind.value} is atomic and has no density")
    x = np.asarray(lam, dtype=float)
    p = m.params
    with np.errstate(invalid="ignore", divide="ignore"):
        if m.kind == MeasureKind.SEMICIRCLE:
            v = p.variance
            rho = np.sqrt(np.clip(4 * v - x ** 2, 0, None)) / (2 * np.pi * v)
        elif m.kind == MeasureKind.ARCSINE or (m.kind == MeasureKind.KESTEN_MCKAY and p.eta == 2):
            inside = np.abs(x) < 2
            rho = np.where(inside, 1.0 / (np.pi * np.sqrt(np.where(inside, 4 - x ** 2, 1.0))), 0.0)
        elif m.kind == MeasureKind.KESTEN_MCKAY:
            eta = p.eta
            radicand = np.clip(4 * (eta - 1) - x ** 2, 0, None)
            rho = eta * np.sqrt(radicand) / (2 * np.pi * (eta ** 2 - x ** 2))
        elif m.kind == MeasureKind.GAUSSIAN:
            rho = np.exp(-x ** 2 / (2 * p.sigma ** 2)) / (math.sqrt(2 * np.pi) * p.sigma)
        elif m.kind == MeasureKind.ORTHOPOLY:
            radicand = np.clip(4 * p.b - (x - p.a) ** 2, 0, None)
            rho = np.where(radicand > 0, np.sqrt(radicand) / (2 * np.pi * (p.b + p.a * x)), 0.0)
        else:
            rho = density_eval(p.base, (x - p.shift) / p.scale) / abs(p.scale)
    rho = np.where(np.isfinite(rho), rho, 0.0)
    return _out(np.clip(rho, 0.0, None))


def _quadrature_form(m: AnalyticMeasure):
    """(lo, hi, smooth factor, algebraic endpoint exponents) of the continuous part"""
    p = m.params
    if m.kind == MeasureKind.SEMICIRCLE:
        r = 2 * math.sqrt(p.variance)
        return -r, r, lambda x: np.ones_like(x) / (2 * np.pi * p.variance), (0.5, 0.5)
    if m.kind == MeasureKind.ARCSINE or (m.kind == MeasureKind.KESTEN_MCKAY and p.eta == 2):
        return -2.0, 2.0, lambda x: np.ones_like(x) / np.pi, (-0.5, -0.5)
    if m.kind == MeasureKind.KESTEN_MCKAY:
        r = 2 * math.sqrt(p.eta - 1)
        return -r, r, lambda x: p.eta / (2 * np.pi * (p.eta ** 2 - x ** 2)), (0.5, 0.5)
    if m.kind == MeasureKind.ORTHOPOLY:
        r = 2 * math.sqrt(p.b)
        return p.a - r, p.a + r, lambda x: 1.0 / (2 * np.pi * (p.b + p.a * x)), (0.5, 0.5)
    return None


def moment(m: AnalyticMeasure, k: int) -> float:
    """k-th raw moment, continuous part by quadrature plus atoms exactly"""
    if k < 0 or k > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order must be in [0, {MAX_MOMENT_ORDER}], got {k}")
    p = m.params
    if m.kind == MeasureKind.AFFINE:
        return float(sum(
            math.comb(k, j) * p.scale ** j * p.shift ** (k - j) * moment(p.base, j)
            for j in range(k + 1)
        ))
    total = sum(mass * location ** k for location, mass in atoms(m))
    if m.kind in (MeasureKind.BERNOULLI, MeasureKind.DIRAC):
        return float(total)
    if m.kind == MeasureKind.GAUSSIAN:
        if k % 2:
            return 0.0
        cutoff = GAUSSIAN_CUTOFF * p.sigma
        value, _ = integrate.quad(
            lambda x: x ** k * math.exp(-x * x / (2 * p.sigma ** 2)), -cutoff, cutoff,
            epsabs=0.0, epsrel=1e-12, limit=400,
        )
        return float(value / (math.sqrt(2 * math.pi) * p.sigma))
    lo, hi, factor, (alpha, beta) = _quadrature_form(m)
    # weight='alg' integrates f(x) * (x - lo)^alpha * (hi - x)^beta
    value, _ = integrate.quad(
        lambda x: float(factor(np.float64(x))) * x ** k, lo, hi,
        weight="alg", wvar=(alpha, beta), epsabs=0.0, epsrel=1e-12, limit=400,
    )
    return float(total + value)


def total_mass(m: AnalyticMeasure) -> float:
    """Mass of the continuous part"""
    if m.is_atomic:
        return 0.0
    return moment(m, 0) - sum(mass for _, mass in atoms(m))


def free_cumulants(m: AnalyticMeasure, k: int) -> np.ndarray:
    """Free cumulants kappa_1..kappa_k from the moment-cumulant recursion"""
    moments = np.array([moment(m, n) for n in range(k + 1)])
    return cumulants_from_moments(moments)


def cumulants_from_moments(moments: Sequence[float]) -> np.ndarray:
    """kappa_1..kappa_k given m_0..m_k (m_0 = 1)"""
    moments = np.asarray(moments, dtype=float)
    k = moments.size - 1
    kappas = np.zeros(k + 1)
    for n in range(1, k + 1):
        # m_n = sum_s kappa_s * [x^(n-s)] M(x)^s
        total = 0.0
        power = np.zeros(k + 1)
        power[0] = 1.0
        for s in range(1, n):
            power = np.convolve(power, moments)[: k + 1]
            total += kappas[s] * power[n - s]
        kappas[n] = moments[n] - total
    return kappas[1:]


def moments_from_cumulants(kappas: Sequence[float]) -> np.ndarray:
    """m_0..m_k given kappa_1..kappa_k"""
    kappas = np.concatenate([[0.0], np.asarray(kappas, dtype=float)])
    k = kappas.size - 1
    moments = np.zeros(k + 1)
    moments[0] = 1.0
    for n in range(1, k + 1):
        power = np.zeros(k + 1)
        power[0] = 1.0
        total = 0.0
        for s in range(1, n + 1):
            power = np.convolve(power, moments)[: k + 1]
            total += kappas[s] * power[n - s]
        moments[n] = total
    return moments


# Cauchy, R and H transforms

def _gaussian_cauchy(sigma: float, z: np.ndarray) -> np.ndarray:
    return -1j * math.sqrt(math.pi / 2) / sigma * special.wofz(z / (math.sqrt(2) * sigma))


def _cauchy(m: AnalyticMeasure, z: np.ndarray) -> np.ndarray:
    p = m.params
    if m.kind == MeasureKind.SEMICIRCLE:
        s = edge_root(z, 0.0, 2 * math.sqrt(p.variance))
        return select_branch((z - s) / (2 * p.variance), (z + s) / (2 * p.variance), z)
    if m.kind == MeasureKind.ARCSINE or (m.kind == MeasureKind.KESTEN_MCKAY and p.eta == 2):
        s = edge_root(z, 0.0, 2.0)
        return select_branch(1.0 / s, -1.0 / s, z)
    if m.kind == MeasureKind.KESTEN_MCKAY:
        eta = p.eta
        s = edge_root(z, 0.0, 2 * math.sqrt(eta - 1))
        denominator = 2 * (eta ** 2 - z ** 2)
        return select_branch(((eta - 2) * z - eta * s) / denominator,
                              ((eta - 2) * z + eta * s) / denominator, z)
    if m.kind == MeasureKind.BERNOULLI:
        return z / (z ** 2 - 1)
    if m.kind == MeasureKind.GAUSSIAN:
        return _gaussian_cauchy(p.sigma, z)
    if m.kind == MeasureKind.ORTHOPOLY:
        s = edge_root(z, p.a, 2 * math.sqrt(p.b))
        denominator = 2 * (p.a * z + p.b)
        return select_branch((z + p.a - s) / denominator, (z + p.a + s) / denominator, z)
    if m.kind == MeasureKind.DIRAC:
        return 1.0 / (z - p.c)
    w = (z - p.shift) / p.scale
    if p.scale > 0:
        return _cauchy(p.base, w) / p.scale
    return np.conj(_cauchy(p.base, np.conj(w))) / p.scale


def cauchy_eval(m: AnalyticMeasure, z):
    """G_m(z) = integral of rho(x) / (z - x) for Im z > 0"""
    return _out(_cauchy(m, require_upper(z)))


def cauchy_derivative(m: AnalyticMeasure, z, order: int):
    """d^n G_m / dz^n for n <= 3"""
    if order < 0 or order > 3:
        raise DerivativeUnavailable(f"derivatives are available up to order 3, got {order}")
    z = require_upper(z)
    return _out(_cauchy_derivative(m, z, order))


def _pole_derivative(poles: Sequence[Tuple[float, float]], z: np.ndarray, order: int) -> np.ndarray:
    total = np.zeros(z.shape, dtype=complex)
    for location, mass in poles:
        total = total + mass * (-1) ** order * math.factorial(order) / (z - location) ** (order + 1)
    return total


def _cauchy_derivative(m: AnalyticMeasure, z: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return _cauchy(m, z)
    p = m.params
    if m.kind == MeasureKind.SEMICIRCLE:
        v = p.variance
        s = edge_root(z, 0.0, 2 * math.sqrt(v))
        if n == 1:
            return (1 - z / s) / (2 * v)
        if n == 2:
            return 2 / s ** 3
        return -6 * z / s ** 5
    if m.kind == MeasureKind.ARCSINE or (m.kind == MeasureKind.KESTEN_MCKAY and p.eta == 2):
        s = edge_root(z, 0.0, 2.0)
        if n == 1:
            return -z / s ** 3
        if n == 2:
            return (2 * z ** 2 + 4) / s ** 5
        return -6 * z * (z ** 2 + 6) / s ** 7
    if m.kind in (MeasureKind.BERNOULLI, MeasureKind.DIRAC):
        return _pole_derivative(atoms(m), z, n)
    if m.kind == MeasureKind.GAUSSIAN:
        scale = math.sqrt(2) * p.sigma
        x = z / scale
        w = special.wofz(x)
        w1 = -2 * x * w + 2j / math.sqrt(math.pi)
        derivatives = [w, w1]
        if n >= 2:
            derivatives.append(-2 * w - 2 * x * w1)
        if n >= 3:
            derivatives.append(-4 * w1 - 2 * x * derivatives[2])
        return -1j * math.sqrt(math.pi / 2) / p.sigma * derivatives[n] / scale ** n
    if m.kind == MeasureKind.AFFINE:
        w = (z - p.shift) / p.scale
        if p.scale > 0:
            base = _cauchy_derivative(p.base, w, n)
        else:
            base = np.conj(_cauchy_derivative(p.base, np.conj(w), n))
        return base / p.scale ** (n + 1)
    # Kesten-McKay and OrthoPoly: contour integral of the closed form
    return np.asarray(contour_derivative(lambda zeta: _cauchy(m, zeta), z, n), dtype=complex)


def r_eval(m: AnalyticMeasure, w):
    """R-transform on the branch with R(0) = kappa_1"""
    w = np.asarray(w, dtype=complex)
    p = m.params
    with np.errstate(invalid="ignore", divide="ignore"):
        if m.kind == MeasureKind.SEMICIRCLE:
            r = p.variance * w
        elif m.kind == MeasureKind.ARCSINE or (m.kind == MeasureKind.KESTEN_MCKAY and p.eta == 2):
            r = np.where(w == 0, 0.0, (-1 + np.sqrt(1 + 4 * w ** 2)) / np.where(w == 0, 1.0, w))
        elif m.kind == MeasureKind.BERNOULLI:
            r = np.where(w == 0, 0.0, (-1 + np.sqrt(1 + 4 * w ** 2)) / np.where(w == 0, 1.0, 2 * w))
        elif m.kind == MeasureKind.ORTHOPOLY:
            denominator = 1 - p.a * w
            if np.any(np.abs(denominator) < 1e-300):
                raise PoleAt(1.0 / p.a, f"orthopoly R-transform has a pole at w = {1.0 / p.a}")
            r = p.b * w / denominator
        elif m.kind == MeasureKind.DIRAC:
            r = np.full(w.shape, p.c, dtype=complex)
        elif m.kind == MeasureKind.AFFINE:
            r = p.scale * np.asarray(r_eval(p.base, p.scale * w)) + p.shift
        else:
            raise NoClosedForm(f"{m.kind.value} has no closed-form R-transform")
    return _out(np.asarray(r, dtype=complex))


def h_eval(m: AnalyticMeasure, z):
    """H(z) = 1/G(z) - z"""
    g = np.asarray(cauchy_eval(m, z))
    if np.any(np.abs(g) < 1e-300):
        raise ZeroCauchy(f"Cauchy transform of {m.kind.value} vanishes at {z}")
    return _out(1.0 / g - np.asarray(z, dtype=complex))


def dawson(x):
    """Dawson function D(x) = exp(-x^2) * integral_0^x exp(t^2) dt"""
    return _out(special.dawsn(np.asarray(x)))


def empirical_cauchy(s: Spectrum, z):
    """(1/n) sum 1/(z - a_i)"""
    z = require_upper(z)
    return _out(np.mean(1.0 / (z[..., None] - s.eigenvalues), axis=-1))


# Evaluators

@dataclass
class GridEvaluation:
    values: np.ndarray
    valid: np.ndarray
    iterations: Optional[np.ndarray] = None
    errors: List[Tuple[int, str]] = field(default_factory=list)


class CauchyEvaluator(ABC):
    """A map z -> G(z) on the upper half-plane"""

    @abstractmethod
    def __call__(self, z):
        ...

    def derivative(self, z, order: int):
        if order < 0 or order > 3:
            raise DerivativeUnavailable(f"derivatives are available up to order 3, got {order}")
        return contour_derivative(self, require_upper(z), order)

    def evaluate_grid(self, points: np.ndarray, threads: int = 1) -> GridEvaluation:
        """Evaluate on many points; failures are flagged per point"""
        points = np.asarray(points, dtype=complex)
        try:
            values = np.asarray(self(points), dtype=complex)
            valid = np.isfinite(values)
            errors = [(int(i), "non-finite value") for i in np.flatnonzero(~valid)]
            return GridEvaluation(np.where(valid, values, 0.0), valid, errors=errors)
        except (FreeSpecError, ArithmeticError, ValueError) as e:
            logger.debug(f"Vectorized evaluation failed ({e}), retrying point by point")
        values = np.zeros(points.shape, dtype=complex)
        valid = np.zeros(points.shape, dtype=bool)
        errors = []
        for i, z in enumerate(points):
            try:
                values[i] = complex(self(z))
                valid[i] = np.isfinite(values[i])
                if not valid[i]:
                    errors.append((i, "non-finite value"))
            except (FreeSpecError, ArithmeticError, ValueError) as e:
                errors.append((i, str(e)))
        return GridEvaluation(np.where(valid, values, 0.0), valid, errors=errors)


class MeasureCauchy(CauchyEvaluator):
    def __init__(self, measure: AnalyticMeasure):
        self.measure = measure

    def __call__(self, z):
        return cauchy_eval(self.measure, z)

    def derivative(self, z, order: int):
        return cauchy_derivative(self.measure, z, order)

    def __repr__(self):
        return f"MeasureCauchy({self.measure})"


class EmpiricalCauchy(CauchyEvaluator):
    def __init__(self, spectrum: Spectrum):
        self.spectrum = spectrum

    def __call__(self, z):
        return empirical_cauchy(self.spectrum, z)

    def derivative(self, z, order: int):
        z = require_upper(z)
        terms = (-1) ** order * math.factorial(order) / (z[..., None] - self.spectrum.eigenvalues) ** (order + 1)
        return _out(np.mean(terms, axis=-1))


class FunctionCauchy(CauchyEvaluator):
    """Wrap a plain function (and optionally its derivative) as an evaluator"""

    def __init__(self, func: Callable, derivative: Optional[Callable] = None):
        self.func = func
        self._derivative = derivative

    def __call__(self, z):
        return self.func(z)

    def derivative(self, z, order: int):
        if self._derivative is not None:
            return self._derivative(z, order)
        return super().derivative(z, order)


class ScaledCauchy(CauchyEvaluator):
    """G of s*O from G of O: (1/s) G(z/s), s > 0"""

    def __init__(self, inner: CauchyEvaluator, scale: float):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.inner = inner
        self.scale = scale

    def __call__(self, z):
        return np.asarray(self.inner(np.asarray(z, dtype=complex) / self.scale)) / self.scale

    def derivative(self, z, order: int):
        inner = self.inner.derivative(np.asarray(z, dtype=complex) / self.scale, order)
        return np.asarray(inner) / self.scale ** (order + 1)

    def evaluate_grid(self, points: np.ndarray, threads: int = 1) -> GridEvaluation:
        result = self.inner.evaluate_grid(np.asarray(points) / self.scale, threads)
        result.values = result.values / self.scale
        return result


def scaled(g: CauchyEvaluator, scale: float) -> CauchyEvaluator:
    return ScaledCauchy(g, scale)


def as_evaluator(g) -> CauchyEvaluator:
    if isinstance(g, CauchyEvaluator):
        return g
    if isinstance(g, AnalyticMeasure):
        return MeasureCauchy(g)
    if isinstance(g, Spectrum):
        return EmpiricalCauchy(g)
    return FunctionCauchy(g)


# Stieltjes inversion

def stieltjes_invert(g, grid, eps: float, extrapolate: bool = False, threads: int = 1) -> DensityCurve:
    """rho(x) = -Im G(x + i eps) / pi, optionally Richardson-extrapolated with 2 eps"""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    evaluator = as_evaluator(g)

    first = evaluator.evaluate_grid(grid + 1j * eps, threads)
    rho = -first.values.imag / np.pi
    valid = first.valid.copy()
    errors = list(first.errors)
    iterations = first.iterations
    if extrapolate:
        second = evaluator.evaluate_grid(grid + 2j * eps, threads)
        rho = 2 * rho - (-second.values.imag / np.pi)
        valid &= second.valid
        seen = {i for i, _ in errors}
        errors.extend((i, msg) for i, msg in second.errors if i not in seen)
        if iterations is not None and second.iterations is not None:
            iterations = iterations + second.iterations

    values = np.where(valid, np.clip(rho, 0.0, None), 0.0)
    if errors:
        logger.warning(f"Stieltjes inversion: {len(errors)} of {grid.size} points invalid")
    return DensityCurve(grid=grid, values=values, valid=valid, iterations=iterations, errors=sorted(errors))


def density_curve(m: AnalyticMeasure, grid) -> DensityCurve:
    """Closed-form density of m sampled on grid"""
    grid = np.asarray(grid, dtype=float)
    return DensityCurve(grid=grid, values=np.asarray(density_eval(m, grid), dtype=float))
