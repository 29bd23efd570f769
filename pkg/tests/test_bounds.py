import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randopen.bounds import (
    RateBoundInputs,
    RateFunction,
    bound_curve,
    corollary_K,
    functional_bound,
    kolmogorov_bound,
    kolmogorov_bound_geometric,
    kolmogorov_terms,
    kolmogorov_window,
    rate_hats,
    smallest_admissible_K,
    wasserstein_bound,
)
from randopen.errors import ConfigurationError, PreconditionError

mp.mp.dps = 40


def inputs(N, theta=1 / 3, L=1.0, C_star=1.0, Sigma=1.0, K=None, C0=1.0, C=1.0):
    return RateBoundInputs(N, L, Sigma * math.sqrt(N), C_star, RateFunction.geometric(theta), K, C0, C)


def mp_geometric_sums(theta, N):
    th = mp.mpf(theta)
    R1 = 1 + mp.fsum(th**n for n in range(1, N))
    R2 = mp.fsum(mp.sqrt(n) * th**n for n in range(1, N))
    R3 = mp.fsum(n * th**n for n in range(1, N))
    return R1, R2, R3


# -- rate hats -----------------------------------------------------------------


def test_geometric_hats_equal_rates():
    h = rate_hats(RateFunction.geometric(0.4), 12)
    np.testing.assert_allclose(h.hat, 0.4 ** np.arange(12))


def test_tabulated_hats_running_sup():
    h = rate_hats(RateFunction.tabulated((0.5, 0.9, 0.1)), 5)
    np.testing.assert_array_equal(h.hat, [1.0, 0.9, 0.9, 0.1, 0.0])


def test_geometric_R1_limit():
    assert rate_hats(RateFunction.geometric(0.5), 200).R1 == pytest.approx(2.0, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=20), st.integers(1, 30))
def test_hats_are_right_suprema(vals, N):
    R = RateFunction.tabulated(vals)
    h = rate_hats(R, N)
    full = [1.0] + list(vals) + [0.0] * 40
    for n in range(1, N):
        assert h.hat[n] == max(full[n:])
    assert h.hat[0] == 1.0
    assert np.all(np.diff(h.hat[1:]) <= 0)


def test_rate_validation():
    with pytest.raises(ConfigurationError):
        RateFunction.geometric(1.0)
    with pytest.raises(ConfigurationError):
        RateFunction.tabulated((0.1, -0.2))
    with pytest.raises(ConfigurationError):
        rate_hats(RateFunction.geometric(0.5), 0)


@pytest.mark.parametrize("kw", [dict(L=0.5), dict(C_star=0.9), dict(Sigma=0.0), dict(C=0.0)])
def test_input_validation(kw):
    with pytest.raises(ConfigurationError):
        inputs(16, **kw)


# -- Wasserstein ---------------------------------------------------------------


def test_wasserstein_without_correlation():
    inp = RateBoundInputs(50, 2.0, 3.0, 1.5, RateFunction.tabulated(()), None, 1.0, 1.7)
    assert wasserstein_bound(inp) == pytest.approx(1.7 * 1.5 * 2.0**5 * 3.0**-3 * 50, rel=1e-15)


def test_wasserstein_linear_in_C_star():
    assert wasserstein_bound(inputs(64, C_star=2.0)) == pytest.approx(2 * wasserstein_bound(inputs(64)), rel=1e-15)


def test_wasserstein_high_precision():
    N = 1024
    _, _, R3 = mp_geometric_sums(mp.mpf(1) / 3, N)
    want = N * mp.sqrt(N) ** -3 * (1 + R3)
    assert wasserstein_bound(inputs(N)) == pytest.approx(float(want), rel=1e-12)


# -- Kolmogorov ----------------------------------------------------------------


def test_kolmogorov_window_rejects_small_K():
    lo, hi = kolmogorov_window(256)
    assert (lo, hi) == (6.0, 256)
    with pytest.raises(PreconditionError):
        kolmogorov_bound(inputs(256, K=6))
    with pytest.raises(PreconditionError):
        kolmogorov_bound(inputs(256, K=257))
    assert smallest_admissible_K(256) == 7
    assert smallest_admissible_K(1000) == 7


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(8, 400),
    st.floats(0.01, 0.99),
    st.floats(1, 4),
    st.floats(1, 4),
    st.floats(0.1, 10),
    st.data(),
)
def test_kolmogorov_terms_nonnegative(N, theta, L, C_star, Sigma, data):
    lo, hi = kolmogorov_window(N)
    K = data.draw(st.integers(math.floor(lo) + 1, hi))
    t = kolmogorov_terms(inputs(N, theta, L, C_star, Sigma, K))
    assert np.all(t >= 0)
    assert math.fsum(t) >= t.max()


def test_corollary_K_example():
    assert corollary_K(1024, 1 / 3) == math.ceil(math.log(1024) / math.log(3)) == 7
    g = kolmogorov_bound_geometric(inputs(1024))
    assert g.K_corollary == 7
    # 7 is not above 2 + log2(1024)/2 = 7, so the smallest admissible K is used
    assert g.K == 8


def test_geometric_route_matches_general_sum():
    g = kolmogorov_bound_geometric(inputs(4096))
    general = kolmogorov_bound(inputs(4096, K=g.K))
    assert general == pytest.approx(g.theorem_value, rel=1e-12)


@pytest.mark.parametrize("N", [2**6, 2**10, 2**16])
@pytest.mark.parametrize("theta", [0.2, 0.5, 0.9])
def test_geometric_route_matches_general_sum_sweep(N, theta):
    g = kolmogorov_bound_geometric(inputs(N, theta))
    if g.K > N:
        assert math.isnan(g.theorem_value)
        return
    assert kolmogorov_bound(inputs(N, theta, K=g.K)) == pytest.approx(g.theorem_value, rel=1e-12)


def test_corollary_rate_bounded():
    Ns = [2**p for p in range(6, 17)]
    ratios = [kolmogorov_bound_geometric(inputs(N)).value * math.sqrt(N) / math.log(N + 1) ** 2 for N in Ns]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)
    thm = [kolmogorov_bound_geometric(inputs(N)).theorem_value * math.sqrt(N) / math.log(N + 1) ** 2 for N in Ns]
    # the six-term sum decays faster than log^2(N) / sqrt(N), so its ratio peaks at the smallest N
    assert all(math.isfinite(v) for v in thm)
    assert max(thm) == thm[0]


def test_geometric_value_cubic_in_L():
    a = kolmogorov_bound_geometric(inputs(512, L=1.0)).value
    b = kolmogorov_bound_geometric(inputs(512, L=2.0)).value
    assert b == pytest.approx(8 * a, rel=1e-14)


def test_geometric_requires_geometric_rate():
    inp = RateBoundInputs(64, 1.0, 8.0, 1.0, RateFunction.tabulated((0.5,)))
    with pytest.raises(ConfigurationError):
        kolmogorov_bound_geometric(inp)


# -- functional ----------------------------------------------------------------


def test_functional_without_correlation():
    inp = RateBoundInputs(30, 2.0, 4.0, 3.0, RateFunction.tabulated(()), None, 0.0, 1.3)
    assert functional_bound(inp) == pytest.approx(1.3 * 27 * 4.0**-3 * 30, rel=1e-15)


def test_functional_increasing_in_C0():
    vals = [functional_bound(inputs(128, 0.5, C0=c)) for c in (0.0, 0.5, 1.0, 2.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_functional_high_precision():
    N, C_star = 256, mp.mpf(2)
    R1, R2, R3 = mp_geometric_sums(mp.mpf(1) / 2, N)
    CN = 8 * (1 + (C_star + 1) * R3 + C_star**1.5 * mp.sqrt(R1) * (1 + R2))
    want = CN * mp.sqrt(N) ** -3 * N
    assert functional_bound(inputs(N, 0.5, C_star=2.0)) == pytest.approx(float(want), rel=1e-12)


# -- shape properties ----------------------------------------------------------


@pytest.mark.parametrize("fn", [wasserstein_bound, functional_bound])
def test_homogeneous_in_C(fn):
    assert fn(inputs(100, C=3.0)) == pytest.approx(3 * fn(inputs(100)), rel=1e-14)


@pytest.mark.parametrize("fn", [wasserstein_bound, functional_bound, lambda i: kolmogorov_bound_geometric(i).value])
@pytest.mark.parametrize("field", ["L", "C_star"])
def test_monotone_in_parameters(fn, field):
    vals = [fn(inputs(200, **{field: v})) for v in (1.0, 1.5, 2.0, 3.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_monotone_in_N_at_fixed_sigma():
    R = RateFunction.geometric(0.5)
    vals = [wasserstein_bound(RateBoundInputs(N, 1.0, 10.0, 1.0, R)) for N in (10, 20, 40, 80)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_wasserstein_rate_is_root_N():
    Ns = [2**p for p in range(6, 17)]
    scaled = [wasserstein_bound(inputs(N)) * math.sqrt(N) for N in Ns]
    assert max(scaled) / min(scaled) < 1.01


def test_bound_curve_columns():
    rows = bound_curve([64, 256, 1024], 1.0, 1.0, 1.0, RateFunction.geometric(0.5))
    assert [r.N for r in rows] == [64, 256, 1024]
    for r in rows:
        lo, hi = kolmogorov_window(r.N)
        assert lo < r.K_used <= hi
        assert r.kolmogorov_bound == pytest.approx(kolmogorov_bound(inputs(r.N, 0.5, K=r.K_used)))
        assert r.wasserstein_bound == pytest.approx(wasserstein_bound(inputs(r.N, 0.5)))
