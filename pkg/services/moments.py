"""Fourth-moment matching between classically and freely coupled sums.

For C = A + B the first three normalized moments do not depend on how the
eigenbases of A and B are related; the fourth does.  Commuting (permutation)
coupling and Haar-orthogonal coupling bracket it, and the weight

    p = (<A^2 B^2> - <(AB)^2>) / (<A^2 B^2> - <(A Q^T L_b Q)^2>)

places a native pair between the two extremes (p = 1 free, p = 0 classical).
"""
import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from services.ensembles import goe_matrix
from services.errors import DenominatorNearZero, DimensionMismatch, GridMismatch, POutOfRange
from services.monitoring import monitoring_service
from services.runner import run_indexed
from services.transforms import DensityCurve, Spectrum

logger = logging.getLogger(__name__)

Sampler = Callable[[int, np.random.Generator], np.ndarray]


class CouplingKind(str, Enum):
    NATIVE = "native"
    PERMUTATION = "permutation"
    HAAR = "haar"


@dataclass
class MomentReport:
    m1: float
    m2: float
    m3: float
    m4: float
    stderr4: float
    realizations: int
    stderrs: Tuple[float, ...] = ()  # standard errors of m1..m4

    @property
    def moments(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.m3, self.m4])


@dataclass
class PEstimate:
    p: float
    stderr: float
    m4_native: float
    m4_classical: float
    m4_free: float
    denominator: float
    denominator_stderr: float
    realizations: int

    def to_dict(self) -> Dict[str, float]:
        return {
            "p": self.p,
            "stderr": self.stderr,
            "m4_native": self.m4_native,
            "m4_classical": self.m4_classical,
            "m4_free": self.m4_free,
        }


def _stream(seed: Optional[int], index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def haar_orthogonal(n: int, seed: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign-corrected columns"""
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    q, r = linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _trace_moments(c: np.ndarray) -> np.ndarray:
    """(1/N) tr C^k for k = 1..4 of a symmetric matrix"""
    n = c.shape[0]
    c2 = c @ c
    return np.array([np.trace(c), np.sum(c * c), np.sum(c2 * c), np.sum(c2 * c2)]) / n


def _diagonal_moments(values: np.ndarray) -> np.ndarray:
    return np.array([np.mean(values ** k) for k in range(1, 5)])


def _report(samples: np.ndarray) -> MomentReport:
    means = samples.mean(axis=0)
    count = samples.shape[0]
    if count > 1:
        stderrs = tuple(float(v) for v in np.std(samples, axis=0, ddof=1) / math.sqrt(count))
    else:
        stderrs = (0.0, 0.0, 0.0, 0.0)
    return MomentReport(*(float(v) for v in means), stderr4=stderrs[3], realizations=count, stderrs=stderrs)


def coupled_moments(la: Spectrum, lb: Spectrum, coupling, seed: Optional[int] = None, realizations: int = 1,
                    A: Optional[np.ndarray] = None, B: Optional[np.ndarray] = None) -> MomentReport:
    """Normalized moments m1..m4 of L_a + Q^T L_b Q with Q drawn according to the coupling"""
    coupling = CouplingKind(coupling)
    if la.n != lb.n:
        raise DimensionMismatch(f"spectra differ in size: {la.n} vs {lb.n}")
    if realizations < 1:
        raise ValueError(f"realizations must be >= 1, got {realizations}")
    a, b = la.eigenvalues, lb.eigenvalues

    if coupling == CouplingKind.NATIVE:
        if A is None or B is None:
            raise ValueError("native coupling needs the matrices A and B")
        A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
        if A.shape != B.shape or A.shape != (la.n, la.n):
            raise DimensionMismatch(f"matrices must be {la.n}x{la.n}, got {A.shape} and {B.shape}")
        return _report(_trace_moments(A + B)[None, :])

    def one(index: int) -> np.ndarray:
        rng = _stream(seed, index)
        if coupling == CouplingKind.PERMUTATION:
            return _diagonal_moments(a + b[rng.permutation(b.size)])
        q = haar_orthogonal(b.size, rng=rng)
        return _trace_moments(np.diag(a) + (q.T * b) @ q)

    return _report(np.array(run_indexed(one, realizations)))


# Samplers for p estimation: (N, rng) -> symmetric matrix

def _diag_normal(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.diag(rng.standard_normal(n))


def _permuted_diag_normal(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.diag(rng.permutation(rng.standard_normal(n)))


def _identity(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.eye(n)


SAMPLERS: Dict[str, Sampler] = {
    "diag-normal": _diag_normal,
    "goe": goe_matrix,
    "permuted-diag-normal": _permuted_diag_normal,
    "identity": _identity,
}


def get_sampler(name) -> Sampler:
    if callable(name):
        return name
    try:
        return SAMPLERS[name]
    except KeyError:
        raise ValueError(f"unknown sampler '{name}', expected one of {sorted(SAMPLERS)}") from None


def _p_terms(a_sampler: Sampler, b_sampler: Sampler, n: int, seed: Optional[int], index: int) -> np.ndarray:
    """(<A^2B^2>, <(AB)^2>, <(A Bf)^2>, m4 native, m4 classical, m4 free) for one realization"""
    rng = _stream(seed, index)
    A = a_sampler(n, rng)
    B = b_sampler(n, rng)
    la = linalg.eigvalsh(A)
    lb = linalg.eigvalsh(B)
    q = haar_orthogonal(n, rng=rng)
    free_b = (q.T * lb) @ q

    a2, b2 = A @ A, B @ B
    ab = A @ B
    a_free = A @ free_b
    mixed_sq = np.sum(a2 * b2) / n
    native_alt = np.sum(ab * ab.T) / n
    free_alt = np.sum(a_free * a_free.T) / n

    m4_native = _trace_moments(A + B)[3]
    m4_classical = float(np.mean((la + lb[rng.permutation(n)]) ** 4))
    m4_free = _trace_moments(A + free_b)[3]
    return np.array([mixed_sq, native_alt, free_alt, m4_native, m4_classical, m4_free])


def p_parameter(a_sampler, b_sampler, N: int, realizations: int, seed: Optional[int] = None,
                threads: int = 1) -> PEstimate:
    """Ratio estimate of the coupling weight p with its Monte Carlo standard error"""
    if realizations < 10:
        raise ValueError(f"p estimation needs at least 10 realizations, got {realizations}")
    a_sampler, b_sampler = get_sampler(a_sampler), get_sampler(b_sampler)
    started = time.time()
    terms = np.array(run_indexed(lambda i: _p_terms(a_sampler, b_sampler, N, seed, i), realizations, threads))

    numerators = terms[:, 0] - terms[:, 1]
    denominators = terms[:, 0] - terms[:, 2]
    numerator, denominator = numerators.mean(), denominators.mean()
    root = math.sqrt(realizations)
    denominator_stderr = float(np.std(denominators, ddof=1) / root)
    floor = 1e-12 * max(1.0, abs(terms[:, 0].mean()))
    if abs(denominator) < max(5 * denominator_stderr, floor):
        raise DenominatorNearZero(
            f"free and classical fourth moments coincide: denominator {denominator:.3e} "
            f"± {denominator_stderr:.3e}"
        )

    p = numerator / denominator
    stderr = float(np.std((numerators - p * denominators) / denominator, ddof=1) / root)
    monitoring_service.record_solver_metrics("p_parameter", time.time() - started, realizations)
    if not -0.1 <= p <= 1.1:
        logger.warning(f"p = {p:.4f} lies outside [-0.1, 1.1]; check the sampler pair")
    return PEstimate(
        p=float(p),
        stderr=stderr,
        m4_native=float(terms[:, 3].mean()),
        m4_classical=float(terms[:, 4].mean()),
        m4_free=float(terms[:, 5].mean()),
        denominator=float(denominator),
        denominator_stderr=denominator_stderr,
        realizations=realizations,
    )


def moment_matched_density(rho_c: DensityCurve, rho_f: DensityCurve, p: float) -> DensityCurve:
    """p rho_f + (1 - p) rho_c; p = 1 is the free coupling"""
    if not 0 <= p <= 1:
        raise POutOfRange(f"p must lie in [0, 1], got {p}")
    if rho_c.grid.shape != rho_f.grid.shape or not np.allclose(rho_c.grid, rho_f.grid, rtol=0, atol=1e-12):
        raise GridMismatch("classical and free curves must share a grid")
    return DensityCurve(
        grid=rho_f.grid,
        values=p * rho_f.values + (1 - p) * rho_c.values,
        valid=rho_c.valid & rho_f.valid,
    )
