"""Random-matrix samplers, symmetric eigensolvers and empirical densities.

Every realization draws from its own generator, seeded by a pure function of
(master seed, realization index), so ensembles are reproducible under any
worker count.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg, stats

from services.errors import DimensionMismatch, EmptyInput, GridMismatch, NoConvergenceEig
from services.monitoring import monitoring_service
from services.runner import run_indexed
from services.transforms import DensityCurve, Spectrum

logger = logging.getLogger(__name__)

SEMICIRCLE_NEWTON_TOL = 1e-12


class ModelKind(str, Enum):
    ANDERSON = "anderson"
    RP = "rp"
    GOE = "goe"
    CHAIN = "chain"


class DiagonalDistribution(str, Enum):
    GAUSSIAN = "gaussian"
    SEMICIRCLE = "semicircle"


class Metric(str, Enum):
    L1 = "l1"
    KS = "ks"
    LINF = "linf"


@dataclass(frozen=True)
class HamiltonianSpec:
    model: ModelKind
    N: int
    seed: int = 0
    J: float = 1.0
    diag_dist: DiagonalDistribution = DiagonalDistribution.GAUSSIAN
    sigma: float = 1.0  # Anderson on-site disorder scale
    gamma: float = 1.5  # RP coupling exponent
    sigma_diag: Optional[float] = None  # RP diagonal std, default 2/sqrt(N)

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model))
        object.__setattr__(self, "diag_dist", DiagonalDistribution(self.diag_dist))
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if self.J < 0:
            raise ValueError(f"J must be >= 0, got {self.J}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def rp_sigma(self) -> float:
        return 2.0 / math.sqrt(self.N) if self.sigma_diag is None else self.sigma_diag


@dataclass(frozen=True, eq=False)
class HamiltonianSample:
    spec: HamiltonianSpec
    index: int
    diag: Optional[np.ndarray] = None
    offdiag: Optional[np.ndarray] = None
    dense: Optional[np.ndarray] = None

    @property
    def is_tridiagonal(self) -> bool:
        return self.dense is None

    @property
    def size(self) -> int:
        return self.diag.size if self.is_tridiagonal else self.dense.shape[0]

    def to_dense(self) -> np.ndarray:
        if not self.is_tridiagonal:
            return self.dense
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def trace(self) -> float:
        return float(np.sum(self.diag) if self.is_tridiagonal else np.trace(self.dense))

    def spectrum(self) -> Spectrum:
        if self.is_tridiagonal:
            return eig_tridiagonal(self.diag, self.offdiag)
        return eig_dense_sym(self.dense)


@dataclass
class EnsembleRun:
    spec: HamiltonianSpec
    realizations: int
    master_seed: int
    seeds: List[int] = field(default_factory=list)
    spectra: List[Spectrum] = field(default_factory=list)

    def pooled(self) -> np.ndarray:
        return np.concatenate([s.eigenvalues for s in self.spectra])


# Random streams

def realization_seed(master_seed: int, index: int, stream: int = 0) -> int:
    """Seed of one realization, a pure function of (master_seed, index, stream)"""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(index, stream))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def realization_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(realization_seed(master_seed, index, stream))


# Samplers

def semicircle_inverse_cdf(u: np.ndarray, radius: float = 2.0, tol: float = SEMICIRCLE_NEWTON_TOL) -> np.ndarray:
    """
    Quantiles of the semicircle law on [-radius, radius].

    With x = radius * sin(t) the CDF is 1/2 + (t + sin t cos t) / pi, which is
    solved by Newton steps in t, falling back to bisection when a step leaves
    the bracket.
    """
    u = np.asarray(u, dtype=float)
    target = np.pi * (u - 0.5)
    lo = np.full(u.shape, -np.pi / 2)
    hi = np.full(u.shape, np.pi / 2)
    t = np.clip(target / 2, lo, hi)
    for _ in range(200):
        f = t + np.sin(t) * np.cos(t) - target
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        slope = 2 * np.cos(t) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            proposal = t - f / slope
        outside = ~((proposal > lo) & (proposal < hi)) | (slope == 0)
        proposal = np.where(outside, (lo + hi) / 2, proposal)
        if np.max(np.abs(proposal - t), initial=0.0) < tol:
            t = proposal
            break
        t = proposal
    return radius * np.sin(t)


def semicircle_cdf(x: np.ndarray, radius: float = 2.0) -> np.ndarray:
    t = np.arcsin(np.clip(np.asarray(x, dtype=float) / radius, -1, 1))
    return 0.5 + (t + np.sin(t) * np.cos(t)) / np.pi


def sample_semicircle(rng: np.random.Generator, size: int, radius: float = 2.0) -> np.ndarray:
    return semicircle_inverse_cdf(rng.random(size), radius)


def goe_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    """GOE with off-diagonal variance 1/N and diagonal variance 2/N"""
    x = rng.standard_normal((n, n))
    return (x + x.T) / math.sqrt(2 * n)


def sample_hamiltonian(spec: HamiltonianSpec, realization_index: int) -> HamiltonianSample:
    rng = realization_rng(spec.seed, realization_index)
    n = spec.N
    if spec.model == ModelKind.ANDERSON:
        if spec.diag_dist == DiagonalDistribution.GAUSSIAN:
            diag = rng.normal(0.0, spec.sigma, n)
        else:
            diag = sample_semicircle(rng, n, radius=2.0 * spec.sigma)
        return HamiltonianSample(spec, realization_index, diag=diag, offdiag=np.full(n - 1, float(spec.J)))
    if spec.model == ModelKind.CHAIN:
        return HamiltonianSample(spec, realization_index, diag=np.zeros(n), offdiag=np.full(n - 1, float(spec.J)))
    if spec.model == ModelKind.GOE:
        return HamiltonianSample(spec, realization_index, dense=goe_matrix(n, rng))
    diag = rng.normal(0.0, spec.rp_sigma, n)
    coupling = n ** (-spec.gamma / 2)
    return HamiltonianSample(spec, realization_index, dense=np.diag(diag) + coupling * goe_matrix(n, rng))


# Eigensolvers

def eig_tridiagonal(diag, offdiag) -> Spectrum:
    diag = np.asarray(diag, dtype=float)
    offdiag = np.asarray(offdiag, dtype=float)
    if offdiag.size != max(diag.size - 1, 0):
        raise DimensionMismatch(f"offdiag needs {diag.size - 1} entries, got {offdiag.size}")
    if diag.size == 1:
        return Spectrum(diag.copy())
    try:
        return Spectrum(linalg.eigvalsh_tridiagonal(diag, offdiag))
    except linalg.LinAlgError as e:
        raise NoConvergenceEig(f"tridiagonal eigensolver failed: {e}") from e


def eig_dense_sym(matrix) -> Spectrum:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {matrix.shape}")
    if not np.array_equal(matrix, matrix.T):
        raise ValueError("matrix is not exactly symmetric")
    try:
        return Spectrum(linalg.eigvalsh(matrix))
    except linalg.LinAlgError as e:
        raise NoConvergenceEig(f"dense eigensolver failed: {e}") from e


def permuted_principal_block(sample: HamiltonianSample, alpha: float, seed: int) -> HamiltonianSample:
    """Top-left ceil(alpha N) block of P H P^T for a uniformly random permutation P"""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    n = sample.size
    size = max(1, math.ceil(alpha * n - 1e-9))
    rng = np.random.default_rng(seed)
    index = rng.permutation(n)[:size]

    if not sample.is_tridiagonal:
        block = sample.dense[np.ix_(index, index)]
    else:
        rows, cols = index[:, None], index[None, :]
        distance = np.abs(rows - cols)
        nearest = np.clip(np.minimum(rows, cols), 0, max(n - 2, 0))
        off = sample.offdiag[nearest] if n > 1 else np.zeros_like(distance, dtype=float)
        block = np.where(distance == 0, sample.diag[rows], 0.0) + np.where(distance == 1, off, 0.0)
    return HamiltonianSample(sample.spec, sample.index, dense=block)


def run_ensemble(spec: HamiltonianSpec, realizations: int, threads: int = 1,
                 block_alpha: Optional[float] = None) -> EnsembleRun:
    """Sample and diagonalize `realizations` independent Hamiltonians"""
    if realizations < 1:
        raise ValueError(f"realizations must be >= 1, got {realizations}")
    started = time.time()
    logger.info(f"Sampling {realizations} x {spec.model.value} (N={spec.N}, seed={spec.seed})")

    def one(index: int) -> Spectrum:
        sample = sample_hamiltonian(spec, index)
        if block_alpha is not None:
            sample = permuted_principal_block(sample, block_alpha, realization_seed(spec.seed, index, stream=1))
        return sample.spectrum()

    spectra = run_indexed(one, realizations, threads)
    monitoring_service.record_solver_metrics("ensemble", time.time() - started, realizations)
    return EnsembleRun(
        spec=spec,
        realizations=realizations,
        master_seed=spec.seed,
        seeds=[realization_seed(spec.seed, i) for i in range(realizations)],
        spectra=spectra,
    )


def scale_spectra(spectra: Sequence[Spectrum], factor: float) -> List[Spectrum]:
    return [Spectrum(s.eigenvalues * factor) for s in spectra]


# Empirical densities and distances

def default_grid(pooled: np.ndarray, bins: int = 200, padding: float = 0.02) -> np.ndarray:
    """Bin centres over the pooled range padded on both sides"""
    lo, hi = float(np.min(pooled)), float(np.max(pooled))
    pad = padding * (hi - lo) if hi > lo else 0.5
    edges = np.linspace(lo - pad, hi + pad, bins + 1)
    return (edges[:-1] + edges[1:]) / 2


def _uniform_step(grid: np.ndarray) -> float:
    steps = np.diff(grid)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise GridMismatch("empirical density needs a uniform grid with at least two points")
    return float(steps[0])


def empirical_density(spectra: Sequence[Spectrum], grid=None, bins: int = 200,
                      method: str = "hist") -> DensityCurve:
    """
    Pooled eigenvalue density on a uniform grid of bin centres.

    The histogram is normalized by the total pooled count, so a grid covering
    every eigenvalue carries mass 1.  method="kde" uses a Gaussian KDE with
    Silverman's bandwidth instead.
    """
    if not spectra:
        raise EmptyInput("empirical density needs at least one spectrum")
    pooled = np.concatenate([s.eigenvalues for s in spectra])
    grid = default_grid(pooled, bins) if grid is None else np.asarray(grid, dtype=float)
    h = _uniform_step(grid)

    if method == "kde":
        values = stats.gaussian_kde(pooled, bw_method="silverman")(grid)
    elif method == "hist":
        edges = np.concatenate([grid - h / 2, [grid[-1] + h / 2]])
        counts, _ = np.histogram(pooled, bins=edges)
        values = counts / (pooled.size * h)
    else:
        raise ValueError(f"unknown estimator '{method}', expected hist or kde")
    return DensityCurve(grid=grid, values=values)


def _resample(a: DensityCurve, b: DensityCurve) -> Tuple[np.ndarray, np.ndarray]:
    if b.grid[-1] < a.grid[0] or b.grid[0] > a.grid[-1]:
        raise GridMismatch("curves do not overlap")
    values = np.interp(a.grid, b.grid, b.values, left=0.0, right=0.0)
    valid = np.interp(a.grid, b.grid, b.valid.astype(float), left=1.0, right=1.0) > 0.5
    return values, valid


def curve_distance(a: DensityCurve, b: DensityCurve, metric="l1",
                   window: Optional[Tuple[float, float]] = None) -> float:
    """L1, KS or L-infinity distance; b is resampled onto a's grid, invalid points ignored"""
    metric = Metric(str(metric).lower())
    b_values, b_valid = _resample(a, b)
    usable = a.valid & b_valid
    inside = np.ones(a.grid.shape, dtype=bool)
    if window is not None:
        inside = (a.grid >= window[0]) & (a.grid <= window[1])
    if np.count_nonzero(inside) < 2:
        raise GridMismatch("window holds fewer than two grid points")
    diff = np.where(usable, a.values - b_values, 0.0)

    if metric == Metric.L1:
        return float(integrate.trapezoid(np.abs(diff[inside]), a.grid[inside]))
    if metric == Metric.LINF:
        return float(np.max(np.abs(diff[inside])))
    x = a.grid[inside]
    cdf_a = integrate.cumulative_trapezoid(np.where(usable, a.values, 0.0)[inside], x, initial=0.0)
    cdf_b = integrate.cumulative_trapezoid(np.where(usable, b_values, 0.0)[inside], x, initial=0.0)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def central_window(curve: DensityCurve, mass: float = 0.9) -> Tuple[float, float]:
    """Quantile interval holding the central `mass` of the curve"""
    cdf = integrate.cumulative_trapezoid(curve.values, curve.grid, initial=0.0)
    total = cdf[-1]
    if total <= 0:
        raise EmptyInput("curve carries no mass")
    cdf = cdf / total
    tail = (1 - mass) / 2
    return float(np.interp(tail, cdf, curve.grid)), float(np.interp(1 - tail, cdf, curve.grid))
