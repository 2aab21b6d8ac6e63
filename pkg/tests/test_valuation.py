"""Weak and strong perturbed values: coincidences, curves, refusals."""

import math

import numpy as np
import pytest

from portsens.estimate import difference_se
from portsens.market import (CoefficientError, KernelStabilityError,
                             MarketModel, constant, indicator, scalar_constant)
from portsens.paths import TimeGrid, simulate
from portsens.utility import custom_utility, log_utility, power_utility
from portsens.valuation import (SURFACE_HEADER, PerturbationSpec,
                                read_surface_csv, value_pair, value_surface,
                                weak_value, write_surface_csv)

UNIT_DRIFT = PerturbationSpec(dmu=constant([1.0]))


@pytest.fixture(scope="module")
def switch_ens():
    """Finer grid than the shared fixtures: the indicator coefficient has an
    O(N^-1/2) occupation-time bias, kept below the test allowance here."""
    return simulate(TimeGrid(1.0, 400), n=1, M=30000, seed=401)


def test_perturbation_spec_validation():
    with pytest.raises(CoefficientError):
        PerturbationSpec(dmu=constant([1.0]), dlambda=constant([1.0]))
    with pytest.raises(CoefficientError):
        PerturbationSpec()
    spec = PerturbationSpec(dmu=constant([0.1, 0.2]),
                            drate=scalar_constant(0.01))
    assert spec.label == "dmu+drate"
    assert spec.is_deterministic
    named = PerturbationSpec(dmu=constant([1.0]), label="bump")
    assert named.label == "bump"
    adapted = PerturbationSpec(dmu=indicator(0, 0.0, [0.0], [1.0]))
    assert not adapted.is_deterministic


def test_perturbation_shape_check(det2d_model):
    ok = PerturbationSpec(dmu=constant([0.04, 0.02]),
                          dsigma=constant([[0.1, 0.0], [0.0, 0.1]]),
                          drate=scalar_constant(0.01))
    ok.validate_for(det2d_model)
    for bad in (PerturbationSpec(dmu=constant([0.04])),
                PerturbationSpec(dsigma=constant([[0.1, 0.0]])),
                PerturbationSpec(drate=constant([0.01, 0.02])),
                PerturbationSpec(dlambda=constant([[1.0, 0.0]]))):
        with pytest.raises(CoefficientError):
            bad.validate_for(det2d_model)


@pytest.mark.parametrize("make_u", [
    log_utility,
    lambda: power_utility(3.0),
    lambda: custom_utility(np.linspace(1e-6, 60.0, 3000),
                           2.0 * np.sqrt(np.linspace(1e-6, 60.0, 3000)),
                           growth_c=2.0, growth_p=2.0),
], ids=["log", "power", "custom"])
def test_weak_equals_strong_at_tau_zero(switch_model, make_u):
    # the tilt weight is exp(0) path by path, so the two estimators share
    # every intermediate array, not just the limit
    ens = simulate(TimeGrid(1.0, 32), n=1, M=2000, seed=402)
    w, s = value_pair(switch_model, make_u(), UNIT_DRIFT, 0.0, ens)
    assert w.mean == s.mean
    assert w.se == s.se
    np.testing.assert_array_equal(w.influence, s.influence)


def test_deterministic_market_values_match_closed_form(det2d_model):
    # constant coefficients: R, Q are exact at any step count and the weak
    # and strong values share one closed-form limit
    mu = np.array([0.08, 0.05])
    sigma = np.array([[0.2, 0.05], [0.0, 0.15]])
    dmu = np.array([0.04, 0.02])
    r, dr, p, T = 0.01, 0.01, 3.0, 1.0
    q = p / (p - 1.0)
    pert = PerturbationSpec(dmu=constant(dmu), drate=scalar_constant(dr))
    ens = simulate(TimeGrid(T, 32), n=2, M=40000, seed=403)
    taus = [0.0, 0.1, 0.2]
    rows = value_surface(det2d_model, power_utility(p), pert, taus, ens)
    for row in rows:
        lam = np.linalg.solve(sigma, mu + row.tau * dmu - (r + row.tau * dr))
        expect = p * math.exp((r + row.tau * dr) * T / p) \
            * math.exp((q - 1.0) / 2.0 * float(lam @ lam) * T)
        assert abs(row.weak.mean - expect) < 3.0 * row.weak.se
        assert abs(row.strong.mean - expect) < 3.0 * row.strong.se
        gap_se = difference_se(row.weak, row.strong)
        assert abs(row.weak.mean - row.strong.mean) < 3.0 * gap_se + 1e-12
    assert rows[0].weak.mean == pytest.approx(3.1261207041437253, abs=0.02)


def test_switch_market_weak_curve(switch_model, switch_ens):
    # occupation-time closed form: u_w = (tau + 1/2) int Phi(-tau sqrt(s)) ds
    #                                    + tau^2 T / 2
    oracle = {0.0: 0.25, 0.05: 0.2689378861884327,
              0.1: 0.2890582493934509, 0.2: 0.3329136896628353,
              0.3: 0.3817382182559083}
    taus = sorted(oracle)
    rows = value_surface(switch_model, log_utility(), UNIT_DRIFT, taus,
                         switch_ens)
    for row in rows:
        tol = 3.0 * row.weak.se + 0.005
        assert abs(row.weak.mean - oracle[row.tau]) < tol, row.tau


def test_switch_market_strong_curve_and_gap(switch_model, switch_ens):
    rows = value_surface(switch_model, log_utility(), UNIT_DRIFT,
                         [0.05, 0.1, 0.2], switch_ens)
    for row in rows:
        tau = row.tau
        expect_strong = (0.5 + tau) * 0.5 + tau * tau * 0.5
        tol = 3.0 * row.strong.se + 0.005
        assert abs(row.strong.mean - expect_strong) < tol
        # the measure tilt pushes paths away from the high-reward region,
        # so the weak value sits strictly below the strong one
        gap = row.weak.mean - row.strong.mean
        occ = {0.05: 0.2689378861884327 - 0.27625,
               0.1: 0.2890582493934509 - 0.305,
               0.2: 0.3329136896628353 - 0.37}[tau]
        gap_se = difference_se(row.weak, row.strong)
        assert gap < 0.0
        assert abs(gap - occ) < 3.0 * gap_se + 0.002


def test_weight_mean_tracks_unit_expectation(switch_model, switch_ens):
    rows = value_surface(switch_model, log_utility(), UNIT_DRIFT, [0.0, 0.2],
                         switch_ens)
    assert rows[0].weight_mean == 1.0
    assert rows[0].strong.extras["weight_mean"] == 1.0
    # E[G] = 1 exactly, also in discrete time
    assert rows[1].weight_mean == pytest.approx(1.0, abs=0.02)


def test_log_deterministic_strong_has_zero_variance(det2d_model, ens2d):
    pert = PerturbationSpec(dmu=constant([0.04, 0.02]))
    rows = value_surface(det2d_model, log_utility(), pert, [0.0, 0.1], ens2d)
    mu = np.array([0.08, 0.05])
    sigma = np.array([[0.2, 0.05], [0.0, 0.15]])
    for row in rows:
        lam = np.linalg.solve(sigma, mu + row.tau * np.array([0.04, 0.02])
                              - 0.01)
        expect = 0.01 + 0.5 * float(lam @ lam)
        assert row.strong.se == 0.0
        assert row.strong.mean == pytest.approx(expect, rel=1e-12)
    assert rows[1].weak.se > 0.0


def test_kernel_breaking_volatility_refused(ens1d):
    model = MarketModel(d=1, n=2, mu=constant([0.06]),
                        sigma=constant([[1.0, 0.0]]))
    rotate = PerturbationSpec(dsigma=constant([[0.0, 1.0]]))
    with pytest.raises(KernelStabilityError):
        value_surface(model, log_utility(), rotate, [0.0, 0.5], ens1d)
    stretch = PerturbationSpec(dsigma=constant([[0.5, 0.0]]))
    rows = value_surface(model, log_utility(), stretch, [0.0, 0.5], ens1d)
    assert rows[1].strong.mean < rows[0].strong.mean  # lambda shrinks


def test_incomplete_adapted_market_refused(ens1d):
    model = MarketModel(d=1, n=2, mu=indicator(0, 0.0, [0.0], [0.5]),
                        sigma=constant([[1.0, 0.0]]))
    pert = PerturbationSpec(dmu=constant([0.1]))
    with pytest.raises(CoefficientError, match="incomplete"):
        value_surface(model, log_utility(), pert, [0.0, 0.1], ens1d)


def test_value_pair_matches_surface(switch_model):
    ens = simulate(TimeGrid(1.0, 64), n=1, M=4000, seed=404)
    rows = value_surface(switch_model, log_utility(), UNIT_DRIFT, [0.1], ens)
    w, s = value_pair(switch_model, log_utility(), UNIT_DRIFT, 0.1, ens)
    assert (w.mean, w.se) == (rows[0].weak.mean, rows[0].weak.se)
    assert (s.mean, s.se) == (rows[0].strong.mean, rows[0].strong.se)
    assert weak_value(switch_model, log_utility(), UNIT_DRIFT, 0.1,
                      ens).mean == w.mean


def test_surface_csv_round_trip(tmp_path, switch_model):
    ens = simulate(TimeGrid(1.0, 16), n=1, M=500, seed=405)
    rows = value_surface(switch_model, power_utility(2.0), UNIT_DRIFT,
                         [0.0, 0.37, 1.25], ens)
    path = tmp_path / "surface.csv"
    write_surface_csv(str(path), rows)
    header = path.read_text().splitlines()[0]
    assert header.split(",") == SURFACE_HEADER
    back = read_surface_csv(str(path))
    assert len(back) == 3
    for rec, row in zip(back, rows):
        assert rec["tau"] == row.tau
        assert rec["u_weak"] == row.weak.mean
        assert rec["se_strong"] == row.strong.se
        assert rec["weight_mean"] == row.weight_mean
        assert rec["seed"] == ens.seed
