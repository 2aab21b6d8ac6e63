"""Coefficient processes, market price of risk, and kernel stability."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from portsens.market import (CoefficientError, CoefficientProcess,
                             MarketModel, SingularVolatilityError, check_h1,
                             constant, dlambda_direction, format_coefficient,
                             h1_from_values, indicator,
                             kernel_preserving_perturbation,
                             market_price_of_risk, merge_deterministic,
                             mpr_from_values, parse_coefficient, piecewise,
                             scalar_constant, zeros)
from portsens.paths import TimeGrid, cumulative, simulate


def test_constant_infers_shape():
    c = constant([[1.0, 2.0], [3.0, 4.0]])
    assert c.shape == (2, 2)
    grid = TimeGrid(1.0, 4)
    vals = c.evaluate(grid)
    assert vals.shape == (4, 2, 2)
    assert np.all(vals == c.values)
    assert scalar_constant(0.05).shape == (1,)


def test_piecewise_segment_selection():
    pw = piecewise([0.25, 0.5], [[1.0], [2.0], [3.0]])
    vals = pw.evaluate(TimeGrid(1.0, 8))
    # left nodes 0, .125, .25, ..., .875; segment switches at the breaks
    assert list(vals[:, 0]) == [1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]
    with pytest.raises(CoefficientError):
        piecewise([0.5, 0.25], [[1.0], [2.0], [3.0]])
    with pytest.raises(CoefficientError):
        piecewise([0.5], [[1.0]])


def test_indicator_reads_left_nodes():
    ind = indicator(0, 0.0, [0.0], [1.0])
    grid = TimeGrid(1.0, 4)
    W = np.zeros((1, 5, 1))
    W[0, :, 0] = [0.0, -1.0, -1.0, 2.0, 2.0]
    vals = ind.evaluate(grid, W)
    # threshold is strict: W = 0 at t_0 counts as low
    assert list(vals[0, :, 0]) == [0.0, 1.0, 1.0, 0.0]
    with pytest.raises(CoefficientError):
        ind.evaluate(grid, None)
    with pytest.raises(CoefficientError):
        indicator(3, 0.0, [0.0], [1.0]).evaluate(grid, W)


def test_merge_deterministic_unions_breakpoints():
    a = piecewise([0.5], [[1.0], [2.0]])
    b = piecewise([0.25], [[10.0], [20.0]])
    merged = merge_deterministic(a, b, lambda x, y: x + y)
    vals = merged.evaluate(TimeGrid(1.0, 8))
    assert list(vals[:, 0]) == [11.0, 11.0, 21.0, 21.0, 22.0, 22.0, 22.0, 22.0]


def test_equals_distinguishes_fields():
    a = constant([1.0, 2.0])
    assert a.equals(constant([1.0, 2.0]))
    assert not a.equals(constant([1.0, 3.0]))
    assert not a.equals(indicator(0, 0.0, [1.0, 2.0], [1.0, 2.0]))


COEFF_CASES = [
    "const:[1.5]",
    "const:[1.0,-2.0,0.5,3.0]",
    "pw:t=[0.5];v=[1.0,2.0]",
    "ind:j=0;c=0.0;lo=[0.0];hi=[1.0]",
    "ind:j=1;c=-0.5;lo=[1.0,0.0];hi=[0.0,2.0]",
]
COEFF_SHAPES = [(1,), (2, 2), (1,), (1,), (2,)]


@pytest.mark.parametrize("text,shape", list(zip(COEFF_CASES, COEFF_SHAPES)))
def test_mini_language_round_trip(text, shape):
    proc = parse_coefficient(text, shape)
    out = format_coefficient(proc)
    again = parse_coefficient(out, shape)
    assert proc.equals(again)
    assert format_coefficient(again) == out


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1,
                max_size=6),
       st.integers(0, 2))
def test_mini_language_round_trip_random(values, kind):
    shape = (len(values),)
    if kind == 0:
        proc = constant(values)
    elif kind == 1:
        proc = piecewise([0.3, 0.7], [values, [v + 1 for v in values],
                                      [v - 1 for v in values]])
    else:
        proc = indicator(1, 0.25, values, [v * 2 for v in values])
    again = parse_coefficient(format_coefficient(proc), shape)
    assert proc.equals(again)


def test_parse_rejects_malformed():
    for text in ["const:[1.0", "pw:t=[0.5];v=[1.0]", "ind:j=0;c=0.0",
                 "mystery:[1.0]", "const:[a,b]"]:
        with pytest.raises(CoefficientError):
            parse_coefficient(text, (1,))
    with pytest.raises(CoefficientError):
        parse_coefficient("const:[1.0,2.0]", (3,))


def test_model_shape_validation():
    with pytest.raises(ValueError):
        MarketModel(d=2, n=1, mu=constant([0.1, 0.1]),
                    sigma=constant([[1.0], [1.0]]))
    with pytest.raises(ValueError):
        MarketModel(d=1, n=1, mu=constant([0.1]),
                    sigma=constant([[1.0]]), x0=0.0)
    with pytest.raises(ValueError):
        MarketModel(d=1, n=1, mu=constant([0.1, 0.2]),
                    sigma=constant([[1.0]]))


def test_mpr_square_market_solves_linear_system(det2d_model):
    grid = TimeGrid(1.0, 4)
    lam = market_price_of_risk(det2d_model, None, grid).values
    sig = det2d_model.sigma.values
    mu = det2d_model.mu.values
    expect = np.linalg.solve(sig, mu - 0.01)
    assert np.allclose(lam, expect, atol=1e-14)
    # frozen oracle: scripts/derive_oracles.py
    assert lam[0] == pytest.approx([0.2833333333333333, 0.26666666666666666])


def test_mpr_degenerate_market_minimal_norm():
    # d = 1, n = 2: lambda = sigma^T (sigma sigma^T)^{-1} excess lies in
    # the row space of sigma
    model = MarketModel(d=1, n=2, mu=constant([0.06]),
                        sigma=constant([[0.2, 0.0]]))
    lam = market_price_of_risk(model, None, TimeGrid(1.0, 2)).values
    assert np.allclose(lam, [[0.3, 0.0], [0.3, 0.0]])


def test_mpr_fast_path_matches_general():
    # the d = 1 shortcut and the generic solve agree bitwise-close
    mu_v = np.array([[0.06], [0.02]])
    sigma_v = np.array([[[0.2, 0.1]], [[0.3, -0.1]]])
    rate_v = np.array([[0.01], [0.0]])
    lam = mpr_from_values(mu_v, sigma_v, rate_v)
    for k in range(2):
        S = sigma_v[k] @ sigma_v[k].T
        expect = sigma_v[k].T @ np.linalg.solve(S, mu_v[k] - rate_v[k])
        assert np.allclose(lam[k], expect, atol=1e-15)


def test_mpr_rejects_singular_volatility():
    model = MarketModel(d=2, n=2, mu=constant([0.1, 0.1]),
                        sigma=constant([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularVolatilityError):
        market_price_of_risk(model, None, TimeGrid(1.0, 2))
    with pytest.raises(SingularVolatilityError):
        mpr_from_values(np.array([0.1]), np.array([[0.0, 0.0]]),
                        np.array([0.0]))


def _fd_dlambda(model, dmu, dsigma, dr, grid, W, h=1e-6):
    def shifted(side):
        mu_v = model.mu.evaluate(grid, W)
        sigma_v = model.sigma.evaluate(grid, W)
        rate_v = model.rate.evaluate(grid, W)
        if dmu is not None:
            mu_v = mu_v + side * h * dmu.evaluate(grid, W)
        if dsigma is not None:
            sigma_v = sigma_v + side * h * dsigma.evaluate(grid, W)
        if dr is not None:
            rate_v = rate_v + side * h * dr.evaluate(grid, W)
        return mpr_from_values(mu_v, sigma_v, rate_v)

    return (shifted(1.0) - shifted(-1.0)) / (2.0 * h)


@pytest.mark.parametrize("dmu,dsigma,dr", [
    (constant([0.04, 0.02]), None, None),
    (None, constant([[0.05, -0.02], [0.01, 0.03]]), None),
    (None, None, scalar_constant(0.01)),
    (constant([0.04, 0.02]), constant([[0.05, -0.02], [0.01, 0.03]]),
     scalar_constant(0.01)),
])
def test_dlambda_direction_matches_fd(det2d_model, dmu, dsigma, dr):
    grid = TimeGrid(1.0, 4)
    formula = dlambda_direction(det2d_model, dmu, dsigma, None, grid, dr=dr)
    fd = _fd_dlambda(det2d_model, dmu, dsigma, dr, grid, None)
    assert np.allclose(formula, fd, atol=1e-8)


def test_dlambda_direction_adapted(switch_model):
    # indicator drift direction evaluated on actual paths
    ens = simulate(TimeGrid(1.0, 16), n=1, M=8, seed=5)
    W = cumulative(ens.increments(0, 8))
    dmu = indicator(0, 0.0, [0.2], [0.6])
    grid = ens.grid
    formula = dlambda_direction(switch_model, dmu, None, W, grid)
    fd = _fd_dlambda(switch_model, dmu, None, None, grid, W)
    assert formula.shape == (8, 16, 1)
    assert np.allclose(formula, fd, atol=1e-8)


def test_h1_accepts_kernel_preserving_and_rejects_rotation():
    sigma = constant([[1.0, 0.0]])
    grid = TimeGrid(1.0, 4)
    ok = check_h1(sigma, constant([[1.5, 0.0]]), grid)
    assert ok.full_rank and ok.kernel_equal and ok.ok
    bad = check_h1(sigma, constant([[1.0, 0.5]]), grid)
    assert not bad.kernel_equal and not bad.ok
    # rank loss of the perturbed matrix is also flagged
    lost = h1_from_values(np.broadcast_to([[1.0, 0.0]], (4, 1, 2)),
                          np.zeros((4, 1, 2)), d=1)
    assert not lost.ok


def test_h1_adapted_needs_paths(switch_model):
    sig = indicator(0, 0.0, [[1.0, 0.0]], [[2.0, 0.0]])
    grid = TimeGrid(1.0, 8)
    with pytest.raises(CoefficientError):
        check_h1(sig, sig, grid)
    ens = simulate(grid, n=2, M=4, seed=1)
    W = cumulative(ens.increments(0, 4))
    rep = check_h1(sig, sig, grid, W)
    assert rep.ok


def test_kernel_preserving_construction():
    sigma = constant([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    A = constant([[0.3, 0.1], [0.0, 0.2]])
    pert, bound = kernel_preserving_perturbation(sigma, A, tau=0.5)
    assert math.isfinite(bound) and bound > 0.5
    grid = TimeGrid(1.0, 4)
    rep = h1_from_values(sigma.evaluate(grid), pert.evaluate(grid), d=2)
    assert rep.ok
    # at the bound the construction may lose rank; it must warn
    with pytest.warns(RuntimeWarning):
        kernel_preserving_perturbation(sigma, A, tau=2.0 * bound)


def test_zeros_and_bound():
    z = zeros((2, 3))
    assert z.bound == 0.0
    assert indicator(0, 0.0, [-3.0], [2.0]).bound == 3.0
    with pytest.raises(CoefficientError):
        constant([np.inf])
