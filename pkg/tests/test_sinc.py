import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracrb import SincGrid, scalar_sinc, sinc_params, universal_params, weights
from fracrb.errors import InvalidParameter
from fracrb.sinc import compensated_sum


@pytest.mark.parametrize("s, k, expected", [
    (0.5, 0.5, (79, 79)), (0.1, 0.5, (44, 395)), (0.9, 0.5, (395, 44)),
    (0.3, 0.5, (57, 132)), (0.7, 0.5, (132, 57)), (0.5, math.pi, (2, 2)),
])
def test_sinc_params(s, k, expected):
    assert sinc_params(s, k) == expected


def test_universal_params():
    assert universal_params(0.1, 0.9, 0.5) == (395, 395)
    assert SincGrid.universal(0.1, 0.9, 0.5).domain == (-197.5, 197.5)
    assert universal_params(0.5, 0.5, 0.5) == sinc_params(0.5, 0.5)
    assert universal_params(0.3, 0.7, 0.5) == (132, 132)


@pytest.mark.parametrize("bad", [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, -1.0), (float("nan"), 0.5)])
def test_bad_params(bad):
    with pytest.raises(InvalidParameter):
        sinc_params(*bad)


def test_bad_universal():
    with pytest.raises(InvalidParameter):
        universal_params(0.7, 0.3, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.05, 3.0))
def test_universal_window_covers(a, b, k):
    lo, hi = min(a, b), max(a, b)
    grid = SincGrid.universal(lo, hi, k)
    for s in (lo, hi, 0.5 * (lo + hi)):
        pos = grid.window(s)
        Ms, Ns = sinc_params(s, k)
        assert pos.size == Ms + Ns + 1
        assert grid.nodes[pos[0]] == pytest.approx(-Ms * k)
        assert grid.nodes[pos[-1]] == pytest.approx(Ns * k)


def test_grid_invariants():
    g = SincGrid(0.5, 3, 4)
    assert g.size == 8 == g.nodes.size
    assert np.allclose(np.diff(g.nodes), 0.5)
    with pytest.raises(InvalidParameter):
        SincGrid(0.5, 0, 4)


def test_window_too_small():
    with pytest.raises(InvalidParameter):
        SincGrid.universal(0.4, 0.6, 0.5).window(0.1)


def test_weights_closed_form():
    grid = SincGrid.universal(0.1, 0.9, 0.5)
    for s in (0.1, 0.5, 0.9):
        pos, w = weights(s, grid)
        y = grid.nodes[pos]
        assert w[np.flatnonzero(y == 0)[0]] == pytest.approx(0.5 * math.sin(s * math.pi) / math.pi)
        assert np.allclose(w, 0.5 * math.sin(s * math.pi) / math.pi * np.exp((1 - s) * y), rtol=1e-13)
    pos, _ = weights(0.5, grid)
    assert pos.size == 159


def test_scalar_sinc_unit():
    assert abs(scalar_sinc(0.5, 0.5, 1.0) - 1.0) <= 3e-9


def test_scalar_sinc_pi_squared():
    k = 0.3
    err = abs(scalar_sinc(0.3, k, math.pi**2) - math.pi**-0.6)
    assert err <= 5 * math.exp(-math.pi**2 / k)


def test_scalar_sinc_vectorized():
    lam = np.array([0.1, 1.0, 10.0])
    out = scalar_sinc(0.4, 0.5, lam)
    assert out.shape == (3,)
    assert np.allclose(out, [scalar_sinc(0.4, 0.5, float(x)) for x in lam], rtol=0, atol=0)
    with pytest.raises(InvalidParameter):
        scalar_sinc(0.4, 0.5, -1.0)


def test_k_refinement_trend():
    lam = np.array([0.5, 1.0, 10.0, 100.0])
    for s in (0.3, 0.5, 0.7):
        errs = [np.abs(scalar_sinc(s, k, lam) - lam**-s).max() for k in (1.0, 0.75, 0.5)]
        assert errs[0] > errs[1] > errs[2]
        for k, e in zip((1.0, 0.75, 0.5), errs):
            assert e <= 20 * math.exp(-math.pi**2 / k)


def test_error_constant_stable():
    lam = np.logspace(-1, 4, 30)
    for s in np.arange(0.1, 1.0, 0.2):
        consts = []
        for k in (0.75, 0.5, 0.4):
            err = np.abs(scalar_sinc(s, k, lam) - lam**-s)
            consts.append(err.max() / math.exp(-math.pi**2 / k))
        # constant fitted at the coarsest step stays valid on refinement
        assert max(consts[1:]) <= 1.5 * consts[0]


def test_truncation_balance():
    for k in (0.3, 0.5, 1.0):
        for s in np.arange(0.1, 1.0, 0.1):
            Ms, Ns = sinc_params(s, k)
            bound = math.exp(-math.pi**2 / k) * (1 + 1e-12)
            assert math.exp(-(1 - s) * Ms * k) <= bound
            assert math.exp(-s * Ns * k) <= bound


def _reflected(s, k, lam):
    # direct loop over the (1 - s) window, evaluated at 1 / lam
    Ms, Ns = sinc_params(1 - s, k)
    c = k * math.sin((1 - s) * math.pi) / math.pi
    mu = 1.0 / lam
    return math.fsum(c * math.exp(s * l * k) / (math.exp(l * k) + mu) for l in range(-Ms, Ns + 1))


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("lam", [0.3, 2.0, 50.0])
def test_reflection_symmetry(s, lam):
    k = 0.5
    # lam^{-s} = lam^{-1} * (1/lam)^{-(1-s)}
    lhs = scalar_sinc(s, k, lam)
    rhs = _reflected(s, k, lam) / lam
    bound = 2 * 5 * math.exp(-math.pi**2 / k) * max(lam**-s, 1.0)
    assert abs(lhs - rhs) <= bound


def test_compensated_sum_cancellation():
    terms = np.array([[1e16], [1.0], [-1e16], [1.0]])
    assert compensated_sum(terms)[0] == 2.0
    assert compensated_sum(np.zeros((0, 3))).shape == (3,)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e10, 1e10, allow_nan=False), min_size=1, max_size=60))
def test_compensated_sum_matches_fsum(xs):
    got = compensated_sum(np.array(xs)[:, None])[0]
    ref = math.fsum(xs)
    assert abs(got - ref) <= 1e-15 * sum(abs(x) for x in xs) + 1e-300
