import math

import numpy as np
import pytest
from scipy import integrate

from services.compression import (
    CompressedCauchy,
    CompressionSpec,
    bernoulli_compressed_edge,
    compress_bernoulli_closed,
    compress_cauchy_fp,
    compress_convolved,
    compress_first_order,
    compress_km_closed,
    compress_km_density,
    compress_orthopoly_closed,
    compress_r,
    compression_evaluator,
    free_power_cauchy,
    km_compressed_edge,
    pde_residual,
)
from services.convolution import subordination_solve
from services.errors import LowerHalfPlane, StencilFailure, ThetaOutOfRange
from services.measures import AnalyticMeasure
from services.transforms import cauchy_eval, stieltjes_invert

Z = 0.3 + 0.5j


def test_compressed_semicircle_shrinks_variance():
    assert compress_cauchy_fp(AnalyticMeasure.semicircle(1.0), 0.5, Z) == pytest.approx(
        cauchy_eval(AnalyticMeasure.semicircle(0.5), Z), abs=1e-10)


def test_alpha_one_is_identity():
    m = AnalyticMeasure.kesten_mckay(4.0)
    assert compress_cauchy_fp(m, 1.0, Z) == pytest.approx(cauchy_eval(m, Z))


@pytest.mark.parametrize("eta,alpha", [(2.0, 0.3), (3.0, 0.6), (4.0, 0.9)])
def test_kesten_mckay_closed_form_matches_fixed_point(eta, alpha):
    fixed_point = compress_cauchy_fp(AnalyticMeasure.kesten_mckay(eta), alpha, Z)
    assert compress_km_closed(eta, alpha, Z) == pytest.approx(fixed_point, abs=1e-9)


def test_kesten_mckay_compressed_density():
    eta, alpha = 3.0, 0.6
    edge = km_compressed_edge(eta, alpha)
    assert edge == pytest.approx(2 * math.sqrt(1.44))
    mass, _ = integrate.quad(lambda x: compress_km_density(eta, alpha, x), -edge, edge, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-6)
    assert compress_km_density(eta, alpha, edge + 0.01) == 0.0
    grid = np.linspace(-2.0, 2.0, 41)
    curve = stieltjes_invert(lambda z: compress_km_closed(eta, alpha, z), grid, 1e-8)
    assert np.max(np.abs(curve.values - compress_km_density(eta, alpha, grid))) < 1e-6


def test_half_compressed_bernoulli_is_a_shrunk_arcsine():
    g = compress_bernoulli_closed(0.5, Z)
    assert g == pytest.approx(2 * cauchy_eval(AnalyticMeasure.arcsine(), 2 * Z), abs=1e-12)
    assert bernoulli_compressed_edge(0.5) == pytest.approx(1.0)
    assert compress_cauchy_fp(AnalyticMeasure.bernoulli(), 0.5, Z) == pytest.approx(g, abs=1e-9)


def test_bernoulli_closed_form_range():
    with pytest.raises(ValueError):
        compress_bernoulli_closed(1.5, Z)
    assert compress_bernoulli_closed(1.0, Z) == pytest.approx(cauchy_eval(AnalyticMeasure.bernoulli(), Z))


def test_orthopoly_closed_form_matches_fixed_point():
    fixed_point = compress_cauchy_fp(AnalyticMeasure.orthopoly(0.5, 1.0), 0.4, Z)
    assert compress_orthopoly_closed(0.5, 1.0, 0.4, Z) == pytest.approx(fixed_point, abs=1e-9)


def test_compressed_r_transform():
    assert compress_r(AnalyticMeasure.semicircle(2.0), 0.5, 0.3) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        CompressionSpec(0.0)
    assert CompressionSpec(0.25).theta == pytest.approx(3.0)


def test_first_order_compression():
    m = AnalyticMeasure.semicircle(1.0)
    assert compress_first_order(m, 0.0, Z) == pytest.approx(cauchy_eval(m, Z))
    theta = 0.01
    exact = compress_cauchy_fp(m, 1 / (1 + theta), Z)
    assert abs(compress_first_order(m, theta, Z) - exact) < 1e-3
    for bad in (1.0, -0.1):
        with pytest.raises(ThetaOutOfRange):
            compress_first_order(m, bad, Z)


@pytest.mark.parametrize("u", [math.log(0.3), math.log(0.5), math.log(0.8)])
def test_compressed_family_satisfies_flow_equation(u):
    residual = pde_residual(lambda v, z: compress_km_closed(3.0, math.exp(v), z), u, 0.4 + 0.6j)
    assert residual < 1e-6


def test_flow_equation_on_fixed_point_solution():
    residual = pde_residual(lambda v, z: compress_cauchy_fp(AnalyticMeasure.semicircle(1.0), math.exp(v), z),
                            math.log(0.5), -0.2 + 0.8j)
    assert residual < 1e-5


def test_stencil_needs_room_above_the_axis():
    with pytest.raises(StencilFailure):
        pde_residual(lambda v, z: compress_km_closed(3.0, math.exp(v), z), math.log(0.5), 0.4 + 0.05j)


def test_compression_rejects_lower_half_plane():
    with pytest.raises(LowerHalfPlane):
        compress_cauchy_fp(AnalyticMeasure.arcsine(), 0.5, 0.4)


def test_compress_convolved_limits():
    ma, mb = AnalyticMeasure.arcsine(), AnalyticMeasure.semicircle(1.0)
    assert compress_convolved(ma, mb, 0.0, 0.6, Z) == pytest.approx(compress_km_closed(2.0, 0.6, Z), abs=1e-9)
    full = subordination_solve(ma, AnalyticMeasure.affine(mb, 0.5), Z).g_c
    assert compress_convolved(ma, mb, 0.5, 1.0, Z) == pytest.approx(full, abs=1e-10)
    assert np.imag(compress_convolved(ma, mb, 0.5, 0.6, Z)) < 0


def test_free_convolution_powers():
    assert free_power_cauchy(AnalyticMeasure.semicircle(1.0), 2.0, Z) == pytest.approx(
        cauchy_eval(AnalyticMeasure.semicircle(2.0), Z), abs=1e-9)
    assert free_power_cauchy(AnalyticMeasure.bernoulli(), 2.0, Z) == pytest.approx(
        cauchy_eval(AnalyticMeasure.arcsine(), Z), abs=1e-9)
    assert free_power_cauchy(AnalyticMeasure.bernoulli(), 3.0, Z) == pytest.approx(
        cauchy_eval(AnalyticMeasure.kesten_mckay(3.0), Z), abs=1e-9)
    with pytest.raises(ValueError):
        free_power_cauchy(AnalyticMeasure.bernoulli(), 0.5, Z)


def test_compression_evaluator_picks_closed_forms():
    assert compression_evaluator(AnalyticMeasure.arcsine(), 0.5)[1] == "km"
    assert compression_evaluator(AnalyticMeasure.kesten_mckay(3.0), 0.5)[1] == "km"
    assert compression_evaluator(AnalyticMeasure.bernoulli(), 0.5)[1] == "bernoulli"
    assert compression_evaluator(AnalyticMeasure.semicircle(1.0), 0.5)[1] == "orthopoly"
    evaluator, used = compression_evaluator(AnalyticMeasure.gaussian(1.0), 0.5)
    assert used == "none"
    assert isinstance(evaluator, CompressedCauchy)
    closed, _ = compression_evaluator(AnalyticMeasure.semicircle(1.0), 0.5)
    assert closed(Z) == pytest.approx(cauchy_eval(AnalyticMeasure.semicircle(0.5), Z))
    with pytest.raises(ValueError):
        compression_evaluator(AnalyticMeasure.gaussian(1.0), 0.5, "km")
    with pytest.raises(ValueError):
        compression_evaluator(AnalyticMeasure.arcsine(), 0.5, "exact")


def test_compressed_grid_is_independent_of_thread_count():
    evaluator = CompressedCauchy(AnalyticMeasure.gaussian(1.0), 0.5)
    grid = np.linspace(-3.0, 3.0, 150)
    serial = stieltjes_invert(evaluator, grid, 1e-3, extrapolate=True, threads=1)
    parallel = stieltjes_invert(evaluator, grid, 1e-3, extrapolate=True, threads=3)
    assert np.array_equal(serial.values, parallel.values)
    assert serial.valid.all()
    assert serial.mass == pytest.approx(1.0, abs=1e-2)
