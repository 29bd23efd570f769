from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randopen.errors import ConfigurationError
from randopen.system import BranchMap, Environment, HoleSpec, OpenSystem, Realization, preset, surviving_cylinders
from randopen.spectral import (
    conformal_measure,
    equivariant_density,
    escape_rate,
    fit_decay,
    interval_mass,
    lasota_yorke_check,
    nu_integral,
    q_decay,
    spectral_triple,
    verify_conditions,
)
from randopen.transfer import GridFunction

from .conftest import constant_fibre

ASYM_WIDTHS = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 8))
ASYM_EDGES = (Fraction(0), Fraction(1, 2), Fraction(3, 4), Fraction(7, 8), Fraction(1))


def asym_lambda(symbol):
    # every branch is full and affine, so L 1 is the surviving length
    return 1 - ASYM_WIDTHS[symbol + 1]


# -- escape rates --------------------------------------------------------------


@pytest.mark.parametrize("k", [64, 256, 1024])
def test_quadrupling_escape_rate(quad, omega, k):
    r = escape_rate(quad, omega, 10, k=k)
    assert np.abs(r.lambdas - 0.75).max() <= 1e-12
    assert r.geometric_mean == pytest.approx(0.75, abs=1e-12)


def test_escape_rate_closed_is_one():
    d = preset("doubling-closed")
    r = escape_rate(d, d.environment.realize(0), 8, k=64)
    np.testing.assert_allclose(r.lambdas, 1.0, atol=1e-12)


def test_escape_rate_double_hole_is_half():
    d = preset("quadrupling-double-hole", seed=5)
    r = escape_rate(d, d.environment.realize(1), 10, k=256)
    np.testing.assert_allclose(r.lambdas, 0.5, atol=1e-12)


@pytest.mark.parametrize("method", ["conformal", "mass-ratio"])
def test_escape_rate_asymmetric_matches_surviving_length(method):
    a = preset("asymmetric-random-hole", seed=2)
    om = a.environment.realize(4)
    r = escape_rate(a, om, 12, k=128, method=method)
    expected = [float(asym_lambda(s)) for s in om.window(0, 12)]
    np.testing.assert_allclose(r.lambdas, expected, atol=1e-10)


def test_escape_rate_routes_agree(quad, omega):
    a = escape_rate(quad, omega, 8, k=256, method="conformal").lambdas
    b = escape_rate(quad, omega, 8, k=256, method="mass-ratio").lambdas
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_escape_rate_rejects_unknown_method(quad, omega):
    with pytest.raises(ConfigurationError):
        escape_rate(quad, omega, 2, k=16, method="power")


# -- densities and conformal measures -----------------------------------------


@pytest.mark.parametrize("name", ["quadrupling-random-hole", "asymmetric-random-hole", "doubling-closed"])
def test_density_is_constant_for_full_affine_branches(name):
    s = preset(name, seed=1)
    phi = equivariant_density(s, s.environment.realize(0), k=256)
    np.testing.assert_allclose(phi.values, 1.0, atol=1e-10)


def test_density_normalised_against_nu():
    a = preset("asymmetric-random-hole", seed=1)
    om = a.environment.realize(2)
    tr = spectral_triple(a, om, 4, k=256)
    assert tr.normalisation == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("n", range(1, 6))
def test_nu_cylinder_mass(quad, omega, n):
    nu = conformal_measure(quad, omega, k=4**6)
    cyl = surviving_cylinders(quad, omega, n)
    for a, b, _ in cyl.intervals[:20]:
        assert nu.mass(a, b) == pytest.approx(3.0**-n, abs=1e-10)
    assert nu.masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_nu_vanishes_on_hole(quad, omega):
    nu = conformal_measure(quad, omega, k=256)
    s = int(omega.window(0, 1)[0])
    assert interval_mass(nu.masses, Fraction(s, 4), Fraction(s + 1, 4)) == 0.0


@pytest.mark.parametrize("index", range(3))
def test_nu_asymmetric_branch_masses(index):
    # conformality on a surviving full branch J: nu(J) = |J| / lambda
    a = preset("asymmetric-random-hole", seed=7)
    om = a.environment.realize(index)
    s = int(om.window(0, 1)[0])
    nu = conformal_measure(a, om, k=256)
    for b in range(4):
        got = nu.mass(ASYM_EDGES[b], ASYM_EDGES[b + 1])
        want = 0.0 if b == s + 1 else float(ASYM_WIDTHS[b] / asym_lambda(s))
        assert got == pytest.approx(want, abs=1e-10)


def test_conformal_relation(quad, omega):
    tr = spectral_triple(quad, omega, 3, k=256)
    from randopen.transfer import OperatorCache

    cache = OperatorCache(quad, 256)
    u = np.random.default_rng(1).normal(size=256)
    for i, s in enumerate(omega.window(0, 3)):
        lhs = np.dot(tr.nus[i + 1], cache[s].push(u))
        assert lhs == pytest.approx(tr.lambdas[i] * np.dot(tr.nus[i], u), abs=1e-12)


# -- decay of the remainder ----------------------------------------------------


def test_q_of_phi_vanishes(quad, omega):
    fit = q_decay(quad, omega, GridFunction.constant(256), 6)
    assert np.abs(fit.values).max() <= 1e-12
    assert fit.annihilated


def test_q_at_zero_is_definition(quad, omega):
    u = GridFunction.indicator(256, Fraction(1, 3), Fraction(7, 8))
    fit = q_decay(quad, omega, u, 1)
    tr = spectral_triple(quad, omega, 1, k=256)
    expected = np.abs(u.values - nu_integral(tr.nu, u) * tr.phi.values).max()
    assert fit.values[0] == pytest.approx(expected, abs=1e-14)


def test_half_indicator_is_annihilated_after_one_step(quad, omega):
    # constant on quarter cells, so its image is constant
    u = GridFunction.indicator(256, 0, Fraction(1, 2))
    fit = q_decay(quad, omega, u, 8)
    assert fit.values[0] > 0
    assert np.abs(fit.values[1:]).max() <= 1e-12


def test_cylinder_indicator_decays_at_one_third(quad, omega):
    cyl = surviving_cylinders(quad, omega, 6)
    a, b, _ = cyl.intervals[0]
    u = GridFunction.indicator(4**6, a, b)
    fit = q_decay(quad, omega, u, 4)
    assert not fit.annihilated
    assert fit.kappa == pytest.approx(1 / 3, abs=0.05)
    assert fit.bound_holds(1.0, 1 / 3, u.variation)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 0.95), st.integers(3, 12))
def test_fit_decay_recovers_geometric(D, kappa, n):
    vals = D * kappa ** np.arange(n + 1)
    D_hat, k_hat, res, ratio, ann = fit_decay(vals, first=2)
    assert not ann
    assert k_hat == pytest.approx(kappa, rel=1e-9)
    assert D_hat == pytest.approx(D, rel=1e-8)
    assert ratio == pytest.approx(kappa, rel=1e-9)
    assert res < 1e-9


# -- standing conditions -------------------------------------------------------


@pytest.fixture(scope="module")
def quad_report():
    return verify_conditions(preset("quadrupling-random-hole", seed=3), n_fibres=40)


def test_quadrupling_conditions_pass(quad_report):
    assert quad_report.all_checkable_pass
    statuses = {c.clause_id: c.status for c in quad_report.clauses}
    assert statuses["C1.measurability"] == "assumed"
    assert statuses["C4.temperedness"] == "assumed"


def test_quadrupling_witness_values(quad_report):
    g = quad_report["C2.growth"].witness
    assert g["lhs"] == pytest.approx(np.log(4))
    assert g["rhs"] == pytest.approx(np.log(2))
    assert quad_report["C1.covering"].witness["M(n)"] == [1, 2, 3, 4]
    h = quad_report["C1.hyperbolicity"].witness
    assert (h["kappa1"], h["kappa2"]) == (4.0, 4.0)
    c3 = quad_report["C3.contraction"].witness
    assert c3["theta"] == pytest.approx(0.5)
    assert c3["C_theta"] == pytest.approx(9.0)
    ratios = quad_report["C3.good_mass"].witness["esssup_(2xi+1)/delta"]
    np.testing.assert_allclose(ratios, [3.0, 9.0, 27.0, 81.0], rtol=1e-12)
    assert quad_report["C4.density_bounds"].witness["C_phi"] == pytest.approx(1.0, abs=1e-10)


def test_asymmetric_growth_clause_fails():
    r = verify_conditions(preset("asymmetric-random-hole"), n_fibres=10, n_spectral=2)
    g = r["C2.growth"]
    assert g.status == "fail"
    assert g.witness["lhs"] == pytest.approx(np.log(4))
    # log(kappa2 / kappa1) + E log(xi + 2) with xi = 0
    assert g.witness["rhs"] == pytest.approx(np.log(8 / 2) + np.log(2))
    assert not r.all_checkable_pass


def test_unit_slope_branch_fails_hyperbolicity():
    bm = BranchMap((Fraction(0), Fraction(1, 2), Fraction(1)), (1, 2), (0, -1))
    r = verify_conditions(OpenSystem((bm,), (HoleSpec.empty(),), Environment(1)), n_fibres=2)
    assert r["C1.hyperbolicity"].status == "fail"
    assert not r.all_checkable_pass


# -- Lasota-Yorke --------------------------------------------------------------


def test_lasota_yorke_indicator(quad, omega):
    ly = lasota_yorke_check(quad, omega, GridFunction.indicator(64, 0, Fraction(1, 2)), 2)
    assert ly.holds
    assert ly.A == pytest.approx(9 / 16)


def test_lasota_yorke_constant(quad, omega):
    ly = lasota_yorke_check(quad, omega, GridFunction.constant(16), 1)
    assert ly.lhs == 0.0
    assert ly.rhs == pytest.approx(ly.K_term)
    assert ly.holds


def test_lasota_yorke_coefficient_three_steps(quad, omega):
    ly = lasota_yorke_check(quad, omega, GridFunction.indicator(64, 0, Fraction(1, 2)), 3)
    assert ly.A == pytest.approx(9 * 4.0**-3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(0, 50))
def test_lasota_yorke_random_grid_functions(seed, n, fibre):
    quad = preset("quadrupling-random-hole", seed=3)
    u = GridFunction(np.random.default_rng(seed).normal(size=256))
    assert lasota_yorke_check(quad, quad.environment.realize(fibre), u, n).holds


def test_lasota_yorke_needs_aligned_grid(quad, omega):
    with pytest.raises(ConfigurationError):
        lasota_yorke_check(quad, omega, GridFunction.constant(16), 3)


def test_constant_fibre_rates(quad):
    r = escape_rate(quad, constant_fibre(1), 5, k=64)
    np.testing.assert_allclose(r.lambdas, 0.75, atol=1e-12)
    assert isinstance(constant_fibre(1), Realization)
