import numpy as np
import pytest

from services.convolution import subordination_solve
from services.errors import LowerHalfPlane, RegimeWarning, UnsupportedOrder
from services.measures import AnalyticMeasure
from services.perturbation import (
    PerturbationCauchy,
    PerturbationKind,
    PerturbationSpec,
    anderson_highJ_cauchy,
    edge_band_mask,
    g_pert_arcsine_first,
    g_pert_arcsine_series,
    g_pert_semicircle,
    perturbed_density,
    preset_evaluator,
    rp_alpha,
    rp_cauchy,
)
from services.transforms import MeasureCauchy, cauchy_eval

Z = 0.5 + 1.0j


def test_order_zero_is_the_base():
    base = AnalyticMeasure.kesten_mckay(3.0)
    assert g_pert_semicircle(base, 0.3, 0, Z) == pytest.approx(cauchy_eval(base, Z))
    spec = PerturbationSpec(base, "arcsine", 0.3, 0)
    assert PerturbationCauchy(spec)(Z) == pytest.approx(cauchy_eval(base, Z))


def test_zero_strength_is_the_base():
    base = AnalyticMeasure.semicircle(1.0)
    assert g_pert_arcsine_series(base, 0.0, 3, Z) == pytest.approx(cauchy_eval(base, Z))
    assert g_pert_arcsine_first(base, 0.0, Z) == pytest.approx(cauchy_eval(base, Z))


def test_semicircle_series_converges_to_variance_shift():
    alpha = 0.1
    exact = cauchy_eval(AnalyticMeasure.semicircle(1 + alpha ** 2), Z)
    errors = [abs(g_pert_semicircle(AnalyticMeasure.semicircle(1.0), alpha, order, Z) - exact)
              for order in (0, 1, 2)]
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-5


def test_arcsine_series_tracks_subordination():
    alpha = 0.1
    base = AnalyticMeasure.semicircle(1.0)
    exact = subordination_solve(base, AnalyticMeasure.affine(AnalyticMeasure.arcsine(), alpha), Z).g_c
    first = abs(g_pert_arcsine_first(base, alpha, Z) - exact)
    third = abs(g_pert_arcsine_series(base, alpha, 3, Z) - exact)
    assert third < first
    assert third < 1e-5


def test_arcsine_series_order_one_matches_first_order_formula():
    base = AnalyticMeasure.gaussian(1.0)
    z = np.array([-0.4 + 0.2j, 1.3 + 0.05j])
    assert g_pert_arcsine_series(base, 0.2, 1, z) == pytest.approx(g_pert_arcsine_first(base, 0.2, z))


@pytest.mark.parametrize("order", [1, 2])
def test_high_j_closed_form_matches_generic_series(order):
    z = np.array([0.3 + 0.2j, -1.5 + 0.05j, 2.5 + 0.1j])
    generic = g_pert_semicircle(AnalyticMeasure.arcsine(), 0.1, order, z)
    assert anderson_highJ_cauchy(0.1, order, z) == pytest.approx(generic, rel=1e-10)


def test_perturbed_transforms_keep_the_branch_contract():
    rng = np.random.default_rng(11)
    z = rng.uniform(-1.5, 1.5, 100) + 1j * rng.uniform(0.05, 2, 100)
    values = np.asarray(anderson_highJ_cauchy(0.1, 2, z))
    assert np.all(values.imag < 0)
    values = np.asarray(g_pert_arcsine_series(AnalyticMeasure.semicircle(1.0), 0.2, 2, z))
    assert np.all(values.imag < 0)


def test_unsupported_orders():
    with pytest.raises(UnsupportedOrder):
        g_pert_semicircle(AnalyticMeasure.arcsine(), 0.1, 3, Z)
    with pytest.raises(UnsupportedOrder):
        g_pert_arcsine_series(AnalyticMeasure.arcsine(), 0.1, 4, Z)
    with pytest.raises(UnsupportedOrder):
        anderson_highJ_cauchy(0.1, 3, Z)
    with pytest.raises(UnsupportedOrder):
        PerturbationSpec(AnalyticMeasure.arcsine(), PerturbationKind.SEMICIRCLE, 0.1, 3)
    with pytest.raises(ValueError):
        PerturbationSpec(AnalyticMeasure.arcsine(), PerturbationKind.SEMICIRCLE, -0.1, 1)


def test_lower_half_plane_rejected():
    with pytest.raises(LowerHalfPlane):
        g_pert_semicircle(AnalyticMeasure.arcsine(), 0.1, 1, 0.3 - 0.1j)


def test_edge_band_mask():
    grid = np.array([-2.1, -2.0, -1.96, 0.0, 1.94, 2.0])
    assert edge_band_mask(grid, (-2.0, 2.0), 0.05).tolist() == [False, True, True, False, False, True]


def test_perturbed_density_flags_edge_band():
    spec = PerturbationSpec(AnalyticMeasure.semicircle(1.0), PerturbationKind.ARCSINE, 0.2, 1)
    grid = np.linspace(-2.5, 2.5, 101)
    curve = perturbed_density(spec, grid, delta=0.05)
    near_edge = np.abs(np.abs(grid) - 2.0) <= 0.05
    assert not curve.valid[near_edge].any()
    assert curve.valid[np.abs(grid) < 1.5].all()
    assert curve.values[50] > 0


def test_unperturbed_density_keeps_edges():
    spec = PerturbationSpec(AnalyticMeasure.semicircle(1.0), PerturbationKind.ARCSINE, 0.2, 0)
    assert perturbed_density(spec, np.linspace(-2.5, 2.5, 11)).valid.all()


def test_rosenzweig_porter_strength_and_regime_warning():
    assert rp_alpha(2.0, 100) == pytest.approx(0.01)
    with pytest.warns(RegimeWarning):
        rp_cauchy(0.1, 0.9, 100, 1, Z)
    value = rp_cauchy(0.1, 1.5, 1000, 2, Z)
    assert value.imag < 0
    with pytest.raises(ValueError):
        rp_cauchy(0.1, 1.5, 1, 2, Z)


def test_high_j_preset_is_rescaled():
    model = preset_evaluator("anderson-high-j", J=10.0)
    assert model.edges == (-20.0, 20.0)
    assert model.scale == 10.0
    w = 0.3 + 0.1j
    assert model.evaluator(10.0 * w) == pytest.approx(anderson_highJ_cauchy(0.1, 2, w) / 10.0)


def test_low_j_preset_uses_semicircle_base():
    model = preset_evaluator("anderson-low-j", J=0.2, order=1)
    expected = g_pert_arcsine_first(MeasureCauchy(AnalyticMeasure.semicircle(1.0)), 0.2, Z)
    assert model.evaluator(Z) == pytest.approx(expected)
    assert model.edges == (-2.0, 2.0)


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset_evaluator("anderson-medium-j")
