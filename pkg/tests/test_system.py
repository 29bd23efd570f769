import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randopen.errors import ConfigurationError, HorizonError, UnsupportedSystemError
from randopen.system import (
    BranchMap,
    Environment,
    HoleSpec,
    OpenSystem,
    Realization,
    monotonicity_pieces,
    orbit,
    preset,
    step,
    surviving_cylinders,
    survives,
    survives_array,
)


def test_multiply_mod1_is_exact_on_rationals():
    bm = BranchMap.multiply_mod1(4)
    assert bm(Fraction(3, 8)) == Fraction(1, 2)
    assert bm(Fraction(1, 4)) == 0
    assert bm.inverse(2) == (Fraction(1, 2), Fraction(1, 4))


@pytest.mark.parametrize(
    "bp, sl, ic",
    [
        ((0, 1), (0,), (0,)),
        ((0, Fraction(1, 2), Fraction(1, 2), 1), (2, 2, 2), (0, 0, -1)),
        ((0, 1), (2,), (0,)),
        ((Fraction(1, 4), 1), (1,), (0,)),
    ],
)
def test_branch_map_validation(bp, sl, ic):
    with pytest.raises(ConfigurationError):
        BranchMap(bp, sl, ic)


def test_hole_validation():
    with pytest.raises(ConfigurationError):
        HoleSpec(((0, 1),))
    with pytest.raises(ConfigurationError):
        HoleSpec(())
    with pytest.raises(ConfigurationError):
        HoleSpec(((0, Fraction(1, 2)), (Fraction(1, 4), Fraction(3, 4))))
    assert HoleSpec.empty().length == 0
    h = HoleSpec(((Fraction(1, 4), Fraction(1, 2)), (Fraction(1, 2), Fraction(3, 4))))
    assert h.n_components == 1


def test_family_must_be_surjective():
    bm = BranchMap((0, 1), (Fraction(1, 2),), (0,))
    with pytest.raises(ConfigurationError):
        OpenSystem((bm,), (HoleSpec.empty(),), Environment(1))


def test_environment_reproducible_and_seed_sensitive():
    e = Environment(4, seed=9)
    a = e.realize(2).window(-50, 200)
    b = e.realize(2).window(-50, 200)
    c = Environment(4, seed=10).realize(2).window(-50, 200)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_realization_shift_is_consistent():
    r = Environment(4, seed=1).realize(0)
    assert np.array_equal(r.shift(5).window(0, 20), r.window(5, 20))
    assert r[-3] == r.window(-3, 1)[0]


def test_markov_environment_respects_forbidden_transitions():
    P = ((0.0, 1.0), (0.5, 0.5))
    r = Environment(2, "markov", matrix=P, seed=4).realize(0)
    w = r.window(-200, 400)
    assert not np.any((w[:-1] == 0) & (w[1:] == 0))


def test_sequence_environment_horizon():
    r = Realization.from_sequence([0, 1, 2], start=0)
    assert list(r.window(0, 3)) == [0, 1, 2]
    with pytest.raises(HorizonError):
        r.window(0, 4)


def test_escape_example(quad):
    omega = Realization.from_sequence([2, 0, 1, 3], start=0)
    assert survives(quad, omega, Fraction(3, 5), 3) == (False, 0)
    # 1/5 -> 4/5 -> 1/5 ...: first entry into a hole [w/4,(w+1)/4)
    ok, esc = survives(quad, omega, Fraction(1, 5), 3)
    x = Fraction(1, 5)
    expected = None
    for j, w in enumerate([2, 0, 1, 3]):
        if Fraction(w, 4) <= x < Fraction(w + 1, 4):
            expected = j
            break
        x = (4 * x) % 1
    assert esc == expected


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 10**6 + 1), st.integers(1, 6))
def test_cylinders_agree_with_direct_survival(p, q, n):
    quad = preset("quadrupling-random-hole", seed=5)
    omega = quad.environment.realize(1)
    x = Fraction(p % q, q)
    cyl = surviving_cylinders(quad, omega, n)
    ok, _ = survives(quad, omega, x, n - 1)
    assert cyl.contains(x) == ok


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_surviving_length_is_power_of_three_quarters(quad, omega, n):
    cyl = surviving_cylinders(quad, omega, n)
    assert cyl.total_length == Fraction(3, 4) ** n
    assert cyl.count == 3**n


def test_cell_lengths_exact(quad, omega):
    cyl = surviving_cylinders(quad, omega, 3)
    cells = cyl.cell_lengths(16)
    assert sum(cells) == Fraction(27, 64)
    # each 1/16 cell is a depth-2 cylinder: dead, or keeps 3/4 of its length at depth 3
    assert set(cells) == {0, Fraction(3, 64)}
    assert cells.count(Fraction(3, 64)) == 9


def test_orbit_exact_versus_float_drift(quad, omega):
    x = Fraction(1, 3)
    exact = orbit(quad, omega, x, 40)
    assert all(v == Fraction(1, 3) for v in exact)
    xs = np.array([1 / 3])
    for s in omega.window(0, 40):
        xs = quad.maps[int(s)].apply(xs)
    assert abs(xs[0] - 1 / 3) > 1e-3


def test_survives_array_matches_scalar(quad, omega, rng):
    xs = rng.random(500)
    ok, esc = survives_array(quad, omega, xs, 6)
    for x, o, e in zip(xs[:50], ok[:50], esc[:50]):
        s, ee = survives(quad, omega, float(x), 6)
        assert s == o
        assert (ee if ee is not None else -1) == e


def test_monotonicity_pieces_cover_survivors(quad, omega):
    pieces = monotonicity_pieces(quad, omega.window(0, 3), holes=True)
    assert sum(p.length for p in pieces) == Fraction(3, 4) ** 3
    assert all(p.full for p in pieces)


def test_json_round_trip(tmp_path, quad):
    path = tmp_path / "sys.json"
    quad.to_json(path)
    back = OpenSystem.from_json(path)
    assert back.to_dict() == quad.to_dict()
    json.loads(path.read_text())


def test_exact_path_guard():
    bm = BranchMap((0, Fraction(1, 2), 1), (2, 2), (0, -1))
    sysm = OpenSystem((bm,), (HoleSpec(((Fraction(1, 3), Fraction(2, 3)),)),), Environment(1))
    assert not sysm.exact_path
    with pytest.raises(UnsupportedSystemError):
        surviving_cylinders(sysm, sysm.environment.realize(0), 2)


def test_presets_available():
    for name in ["quadrupling-random-hole", "quadrupling-double-hole", "asymmetric-random-hole", "doubling-closed"]:
        assert preset(name, 0).name == name
    with pytest.raises(ConfigurationError):
        preset("nope")


def test_step_rejects_bad_symbol(quad):
    with pytest.raises(ConfigurationError):
        step(quad, 7, 0.5)
