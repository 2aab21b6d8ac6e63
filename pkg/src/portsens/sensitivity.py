"""Directional derivatives of the perturbed values, in closed form and by
finite differences.

The central objects are the weak and strong sensitivities at the base
market: derivatives of the perturbed value in tau at tau = 0.  Both have
closed-form representations as expectations of path functionals of the
BASE optimum, so one simulation estimates them without any differencing.
With S = sigma sigma^T, Dlambda the price-of-risk direction induced by
(dmu, dsigma, dr), and X the base optimal wealth:

weak     E[ U(X) ( int Dlambda^T dW + (1/p) int dr dt ) ]  (power index p)
strong   adds the quadratic coupling int lambda^T Dlambda dt of the fixed
         paths to the moving coefficients.

The estimators below are the exact tau-derivatives of the Monte Carlo
value curves of the valuation module under common random numbers.  That is
a stronger property than unbiasedness: central finite differences of the
simulated curve converge to the formula estimate at the deterministic rate
O(eps^2) with no Monte Carlo noise in the difference, which makes the
formula-versus-difference verdicts sharp.

Two classical pitfalls are packaged as reports: the drift example where
the weak and strong sensitivities genuinely differ (an adapted price of
risk reacts to the tilted paths), and the discrepancy functional showing
that the base-point derivative formula cannot be transported to perturbed
points when the price of risk is adapted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from portsens import utility as ut
from portsens.estimate import (ValueEstimate, combine_linear, delta_estimate,
                               difference_se, mean_estimate)
from portsens.market import (CoefficientError, MarketModel, constant,
                             dlambda_direction, indicator, mpr_from_values)
from portsens.paths import (PathEnsemble, TimeGrid, ito_sum, map_blocks,
                            quad_sum, simulate)
from portsens.solver import bisect_budget
from portsens.valuation import PerturbationSpec, value_surface


def _direction_values(model: MarketModel, pert: PerturbationSpec,
                      grid: TimeGrid, W: np.ndarray | None):
    """Price-of-risk direction values and the rate direction, per node.

    Both branches return dense arrays so that reductions sum in the same
    order regardless of how the direction was specified; the chain rule
    through the price of risk is then reproducible bit for bit.
    """
    if pert.dlambda is not None:
        return np.ascontiguousarray(pert.dlambda.evaluate(grid, W)), None
    dlam = np.ascontiguousarray(
        dlambda_direction(model, pert.dmu, pert.dsigma, W, grid,
                          dr=pert.drate))
    dr_v = pert.drate.evaluate(grid, W) if pert.drate is not None else None
    return dlam, dr_v


def _sens_arrays(model: MarketModel, u: ut.UtilitySpec,
                 pert: PerturbationSpec, ensemble: PathEnsemble,
                 workers=None) -> dict:
    """Per-path ingredients of the base-point sensitivities, one pass.

    payload  Zhat^{1-q} (power), int r dt + |lambda|^2 dt / 2 (log), or
             log Zhat (custom)
    s2       int Dlambda^T dW
    dq       int lambda^T Dlambda dt
    dr       int dr dt
    """
    grid = ensemble.grid

    def block(start, stop, dW, W):
        B = stop - start
        dt = grid.dt
        mu_v = model.mu.evaluate(grid, W)
        sg_v = model.sigma.evaluate(grid, W)
        r_v = model.rate.evaluate(grid, W)
        lam = mpr_from_values(mu_v, sg_v, r_v, model.cond_cap)
        dlam, dr_v = _direction_values(model, pert, grid, W)

        R = np.sum(r_v, axis=(-2, -1)) * dt
        S1 = ito_sum(lam, dW)
        Q11 = quad_sum(lam, lam, dt)
        s2 = ito_sum(dlam, dW)
        dq = quad_sum(lam, dlam, dt)
        dR = (np.zeros(()) if dr_v is None
              else np.sum(dr_v, axis=(-2, -1)) * dt)
        if u.kind == "power":
            payload = np.exp((u.q - 1.0) * (R + S1 + 0.5 * Q11))
        elif u.kind == "log":
            payload = R + 0.5 * Q11
        else:
            payload = -(R + S1 + 0.5 * Q11)  # log Zhat
        return tuple(np.broadcast_to(a, (B,)).astype(float, copy=True)
                     for a in (payload, s2, dq, dR))

    flat = map_blocks(ensemble, block, workers)
    return dict(zip(("payload", "s2", "dq", "dr"), flat))


def _power_sens(u, x0, v, fac, seed, name, extras) -> ValueEstimate:
    scale = u.p * x0 ** (1.0 / u.p)
    return delta_estimate(
        [v, v * fac],
        lambda m: scale * m[0] ** (-1.0 / u.p) * m[1],
        lambda m: np.array([-scale / u.p * m[0] ** (-1.0 / u.p - 1.0) * m[1],
                            scale * m[0] ** (-1.0 / u.p)]),
        seed, name, extras=extras)


def sensitivity_pair(model: MarketModel, u: ut.UtilitySpec,
                     pert: PerturbationSpec, ensemble: PathEnsemble,
                     workers=None) -> tuple[ValueEstimate, ValueEstimate]:
    """(weak, strong) closed-form sensitivity estimates from one pass."""
    pert.validate_for(model)
    arrs = _sens_arrays(model, u, pert, ensemble, workers)
    seed = ensemble.seed
    s2, dq, dR = arrs["s2"], arrs["dq"], arrs["dr"]
    x0 = model.x0
    extras = {"direction": pert.label}
    if u.kind == "power":
        v = arrs["payload"]
        weak = _power_sens(u, x0, v, s2 + dR / u.p, seed,
                           f"weak-sens[{pert.label}]", extras)
        strong = _power_sens(u, x0, v, (s2 + dq + dR) / u.p, seed,
                             f"strong-sens[{pert.label}]", extras)
    elif u.kind == "log":
        lin = arrs["payload"]
        weak = mean_estimate(s2 * (lin + math.log(x0)) + dq + dR, seed,
                             f"weak-sens[{pert.label}]", extras=extras)
        strong = mean_estimate(np.broadcast_to(dq + dR, s2.shape), seed,
                               f"strong-sens[{pert.label}]", extras=extras)
    else:
        if pert.drate is not None:
            raise CoefficientError("rate directions need power or log "
                                   "utility")
        zhat = np.exp(arrs["payload"])
        y = bisect_budget(u, zhat, x0)
        xbar = np.asarray(ut.inverse_marginal(u, y * zhat))
        uvals = np.asarray(ut.evaluate(u, xbar))
        weak = mean_estimate(uvals * s2, seed, f"weak-sens[{pert.label}]",
                             extras=extras)
        # envelope form: only the pricing density moves the strong value
        strong = mean_estimate(y * zhat * xbar * (s2 + dq), seed,
                               f"strong-sens[{pert.label}]", extras=extras)
    return weak, strong


def weak_sensitivity(model, u, pert, ensemble, workers=None) -> ValueEstimate:
    return sensitivity_pair(model, u, pert, ensemble, workers)[0]


def strong_sensitivity(model, u, pert, ensemble, workers=None) \
        -> ValueEstimate:
    return sensitivity_pair(model, u, pert, ensemble, workers)[1]


def weak_sensitivity_at(model: MarketModel, u: ut.UtilitySpec,
                        direction: PerturbationSpec, at: PerturbationSpec,
                        theta: float, ensemble: PathEnsemble,
                        workers=None) -> ValueEstimate:
    """Derivative of the weak value at the perturbed point lambda^theta.

    Away from the base the derivative picks up a correction to the naive
    stochastic-integral formula:

        E[ G * U(X[lambda^theta]) *
           ( int Dlambda^T dW - int (lambda^theta - lambda)^T Dlambda dt ) ]

    with G the measure-change weight of the point.  At theta = 0 this
    reduces to the base-point formula (in its unreduced form, so the
    estimate differs pathwise from ``weak_sensitivity`` while estimating
    the same number).
    """
    direction.validate_for(model)
    at.validate_for(model)
    if direction.drate is not None or at.drate is not None:
        raise CoefficientError("point derivatives support mu, sigma and "
                               "lambda directions only")
    grid = ensemble.grid

    def block(start, stop, dW, W):
        B = stop - start
        dt = grid.dt
        mu_v = model.mu.evaluate(grid, W)
        sg_v = model.sigma.evaluate(grid, W)
        r_v = model.rate.evaluate(grid, W)
        lam0 = mpr_from_values(mu_v, sg_v, r_v, model.cond_cap)
        if at.dlambda is not None:
            lam = lam0 + theta * at.dlambda.evaluate(grid, W)
        else:
            mu_t = (mu_v if at.dmu is None
                    else mu_v + theta * at.dmu.evaluate(grid, W))
            sg_t = (sg_v if at.dsigma is None
                    else sg_v + theta * at.dsigma.evaluate(grid, W))
            lam = mpr_from_values(mu_t, sg_t, r_v, model.cond_cap)
        dlam, _ = _direction_values(model, direction, grid, W)

        delta = lam - lam0
        R = np.sum(r_v, axis=(-2, -1)) * dt
        log_g = ito_sum(delta, dW) - 0.5 * quad_sum(delta, delta, dt)
        S = ito_sum(lam, dW)
        Q = quad_sum(lam, lam, dt)
        # log Zhat^theta on the tilted measure
        log_zw = -S + quad_sum(lam, delta, dt) - 0.5 * Q - R
        factor = ito_sum(dlam, dW) - quad_sum(delta, dlam, dt)
        return tuple(np.broadcast_to(a, (B,)).astype(float, copy=True)
                     for a in (log_g, log_zw, factor))

    log_g, log_zw, factor = map_blocks(ensemble, block, workers)
    seed = ensemble.seed
    name = f"weak-sens-at[theta={theta:g},{direction.label}]"
    x0 = model.x0
    if u.kind == "power":
        a = np.exp(log_g + (1.0 - u.q) * log_zw)
        scale = u.p * x0 ** (1.0 / u.p)
        return delta_estimate(
            [a, a * factor],
            lambda m: scale * m[0] ** (-1.0 / u.p) * m[1],
            lambda m: np.array([-scale / u.p
                                * m[0] ** (-1.0 / u.p - 1.0) * m[1],
                                scale * m[0] ** (-1.0 / u.p)]),
            seed, name, extras={"theta": theta})
    if u.kind == "log":
        g = np.exp(log_g)
        uvals = math.log(x0) - log_zw
        return mean_estimate(g * uvals * factor, seed, name,
                             extras={"theta": theta})
    raise CoefficientError("point derivatives support power and log utility")


# ---------------------------------------------------------------------------
# finite differences

def fd_sensitivity(model: MarketModel, u: ut.UtilitySpec,
                   pert: PerturbationSpec, ensemble: PathEnsemble,
                   eps: tuple = (0.2, 0.1, 0.05, 0.025), side: str = "weak",
                   workers=None) -> ValueEstimate:
    """Central differences of the value curve, Richardson-extrapolated.

    The curve is simulated once on a shared tau grid (common random
    numbers), each difference reuses the per-path influence vectors, and
    the two finest steps combine to (4 d_h - d_2h) / 3.  The extras carry
    the raw differences and the extrapolation correction, which bounds the
    residual O(h^2) bias of the finest difference.
    """
    eps = tuple(sorted(float(e) for e in eps))
    if len(eps) < 2 or not all(e > 0 for e in eps):
        raise ValueError("need at least two positive step sizes")
    taus = sorted({s * e for e in eps for s in (1.0, -1.0)})
    rows = value_surface(model, u, pert, taus, ensemble, workers)
    by_tau = {r.tau: (r.weak if side == "weak" else r.strong) for r in rows}

    diffs = {}
    for e in eps:
        hi, lo = by_tau[e], by_tau[-e]
        diffs[e] = combine_linear([hi, lo], [0.5 / e, -0.5 / e],
                                  f"central[{e:g}]")
    # eliminate the h^2 error term from the two finest steps
    h1, h2 = eps[0], eps[1]
    fine, coarse = diffs[h1], diffs[h2]
    w = h2 * h2 / (h2 * h2 - h1 * h1)
    rich = combine_linear([fine, coarse], [w, 1.0 - w],
                          f"richardson[{side},{pert.label}]")
    correction = rich.mean - fine.mean
    extras = {"by_eps": {e: d.mean for e, d in diffs.items()},
              "correction": correction, "side": side, "eps": eps}
    return ValueEstimate(mean=rich.mean, se=rich.se, count=rich.count,
                         seed=rich.seed, estimator=rich.estimator,
                         influence=rich.influence, extras=extras)


@dataclass(frozen=True, eq=False)
class SensitivityReport:
    """Formula-versus-difference comparison for one direction."""

    direction: str
    side: str
    formula: ValueEstimate
    fd: ValueEstimate
    gap: float
    tolerance: float
    verdict: bool

    def line(self) -> str:
        flag = "ok" if self.verdict else "MISMATCH"
        return (f"{self.direction} [{self.side}]: formula "
                f"{self.formula.mean:.6g} (se {self.formula.se:.2g}), "
                f"difference {self.fd.mean:.6g} (se {self.fd.se:.2g}), "
                f"gap {self.gap:.2e} <= {self.tolerance:.2e}: {flag}")


def sensitivity_report(model: MarketModel, u: ut.UtilitySpec,
                       pert: PerturbationSpec, ensemble: PathEnsemble,
                       eps: tuple = (0.2, 0.1, 0.05, 0.025),
                       side: str = "weak", workers=None) -> SensitivityReport:
    """Closed-form sensitivity against the Richardson difference.

    The verdict tolerance combines the Monte Carlo error of the formula-
    minus-difference contrast (tight, because both ride on the same paths)
    with the extrapolation correction as a bias allowance, plus a floating-
    point floor: when the curve is exactly quadratic in tau the difference
    reproduces the formula path by path and only rounding noise remains.
    """
    weak, strong = sensitivity_pair(model, u, pert, ensemble, workers)
    formula = weak if side == "weak" else strong
    fd = fd_sensitivity(model, u, pert, ensemble, eps, side, workers)
    gap = abs(formula.mean - fd.mean)
    tol = (3.0 * difference_se(formula, fd) + abs(fd.extras["correction"])
           + 1e-11 * (1.0 + abs(formula.mean)))
    return SensitivityReport(direction=pert.label, side=side, formula=formula,
                             fd=fd, gap=gap, tolerance=tol,
                             verdict=bool(gap <= tol))


# ---------------------------------------------------------------------------
# the two counterexamples

def _example1_model() -> tuple[MarketModel, PerturbationSpec]:
    """Unit volatility, price of risk 1 on {W < 0} and 0 elsewhere,
    perturbed by a constant unit drift."""
    model = MarketModel(d=1, n=1,
                        mu=indicator(0, 0.0, [0.0], [1.0]),
                        sigma=constant([[1.0]]))
    return model, PerturbationSpec(dmu=constant([1.0]), label="unit-drift")


@dataclass(frozen=True, eq=False)
class Example1Report:
    """Weak and strong drift sensitivities of the sign-switching market.

    The strong sensitivity is T/2: the perturbation only matters while the
    price of risk is on, which happens half the time.  The weak one is
    smaller by T^{3/2} / (3 sqrt(2 pi)): tilting the measure moves the
    paths, and the price of risk switches off exactly where the tilt
    pushes them.
    """

    horizon: float
    weak: ValueEstimate
    strong: ValueEstimate
    expected_weak: float
    expected_strong: float
    gap_se: float

    @property
    def gap(self) -> float:
        return self.weak.mean - self.strong.mean

    @property
    def expected_gap(self) -> float:
        return self.expected_weak - self.expected_strong

    @property
    def gap_sigmas(self) -> float:
        return abs(self.gap) / self.gap_se if self.gap_se > 0 else math.inf


def example1_report(T: float = 1.0, M: int = 200_000, N: int = 2000,
                    seed: int = 20_08, block_paths: int = 8192,
                    workers=None) -> Example1Report:
    model, pert = _example1_model()
    grid = TimeGrid(T, N)
    ensemble = simulate(grid, n=1, M=M, seed=seed, block_paths=block_paths)
    weak, strong = sensitivity_pair(model, ut.log_utility(), pert, ensemble,
                                    workers)
    return Example1Report(
        horizon=T, weak=weak, strong=strong,
        expected_weak=T / 2.0 - T ** 1.5 / (3.0 * math.sqrt(2.0 * math.pi)),
        expected_strong=T / 2.0,
        gap_se=difference_se(weak, strong))


@dataclass(frozen=True, eq=False)
class DiscrepancyReport:
    """Value of E[ exp(int lambda dW + int |lambda|^2 dt / 2) *
    (int Dlambda dW - int lambda^T Dlambda dt) ].

    This is the obstruction to reusing the base-point derivative formula
    at a perturbed point (square-root utility normalization).  It vanishes
    for every deterministic price of risk but not in general: with
    Dlambda = -1 and lambda = 1 on {W < 0} the expectation is strictly
    positive.
    """

    value: ValueEstimate

    @property
    def sigmas_from_zero(self) -> float:
        if self.value.se == 0:
            return math.inf if self.value.mean != 0 else 0.0
        return abs(self.value.mean) / self.value.se


def discrepancy_report(lam, dlam, ensemble: PathEnsemble,
                       workers=None) -> DiscrepancyReport:
    """Monte Carlo estimate of the discrepancy functional.

    ``lam`` and ``dlam`` are coefficient processes with the shape (n,) of
    the price of risk.
    """
    grid = ensemble.grid

    def block(start, stop, dW, W):
        dt = grid.dt
        lam_v = lam.evaluate(grid, W)
        dlam_v = dlam.evaluate(grid, W)
        s1 = ito_sum(lam_v, dW)
        q11 = quad_sum(lam_v, lam_v, dt)
        s2 = ito_sum(dlam_v, dW)
        dq = quad_sum(lam_v, dlam_v, dt)
        out = np.exp(s1 + 0.5 * q11) * (s2 - dq)
        return np.broadcast_to(out, (stop - start,)).astype(float, copy=True)

    vals = map_blocks(ensemble, block, workers)
    est = mean_estimate(vals, ensemble.seed, "discrepancy")
    return DiscrepancyReport(value=est)


def example2_reports(T: float = 1.0, M: int = 50_000, N: int = 500,
                     seed: int = 20_09, block_paths: int = 8192,
                     workers=None) -> tuple[DiscrepancyReport,
                                            DiscrepancyReport]:
    """(deterministic, adapted) discrepancy pair on shared paths.

    The deterministic case takes lambda = 1 and must vanish; the adapted
    case takes lambda = 1 on {W < 0} with direction -1 and must not.
    """
    grid = TimeGrid(T, N)
    ensemble = simulate(grid, n=1, M=M, seed=seed, block_paths=block_paths)
    det = discrepancy_report(constant([1.0]), constant([-1.0]), ensemble,
                             workers)
    adapted = discrepancy_report(indicator(0, 0.0, [0.0], [1.0]),
                                 constant([-1.0]), ensemble, workers)
    return det, adapted


# ---------------------------------------------------------------------------
# second-order expansion quality

@dataclass(frozen=True, eq=False)
class SecondOrderReport:
    """How fast the below-tangent part of the value curve vanishes.

    The first-order expansion u(eps) ~ u(0) + eps * D can overshoot the
    curve; the overshoot must be second order for D to be the derivative.
    The report fits a log-log slope to the negative residual parts that
    exceed the numerical floor; with no such points the check is vacuous
    and the slope reported as infinity.
    """

    eps: tuple
    residuals: tuple
    negative_parts: tuple
    floor: float
    slope: float
    vacuous: bool

    @property
    def passed(self) -> bool:
        return self.vacuous or self.slope >= 1.8


def second_order_check(model: MarketModel, u: ut.UtilitySpec,
                       pert: PerturbationSpec, ensemble: PathEnsemble,
                       eps: tuple = (0.2, 0.1, 0.05, 0.025),
                       workers=None) -> SecondOrderReport:
    eps = tuple(sorted(float(e) for e in eps))
    taus = [0.0] + list(eps)
    rows = value_surface(model, u, pert, taus, ensemble, workers)
    by_tau = {r.tau: r.weak for r in rows}
    base = by_tau[0.0]
    deriv = weak_sensitivity(model, u, pert, ensemble, workers)

    scale = abs(base.mean) + max(abs(by_tau[e].mean) for e in eps)
    floor = 1e-12 * max(scale, 1.0)
    residuals, neg = [], []
    for e in eps:
        r = by_tau[e].mean - base.mean - e * deriv.mean
        residuals.append(r)
        neg.append(max(-r, 0.0))
    pts = [(e, v) for e, v in zip(eps, neg) if v > floor]
    if len(pts) < 2:
        slope, vacuous = math.inf, True
    else:
        xs = np.log([p[0] for p in pts])
        ys = np.log([p[1] for p in pts])
        slope, vacuous = float(np.polyfit(xs, ys, 1)[0]), False
    return SecondOrderReport(eps=eps, residuals=tuple(residuals),
                             negative_parts=tuple(neg), floor=floor,
                             slope=slope, vacuous=vacuous)


# ---------------------------------------------------------------------------
# weak-minus-strong contrast

@dataclass(frozen=True, eq=False)
class GapReport:
    weak: ValueEstimate
    strong: ValueEstimate
    gap: float
    se: float
    expected_gap: float | None = None

    @property
    def sigmas_from_zero(self) -> float:
        return abs(self.gap) / self.se if self.se > 0 else math.inf


def gap_report(model: MarketModel, u: ut.UtilitySpec, pert: PerturbationSpec,
               ensemble: PathEnsemble, expected_gap: float | None = None,
               workers=None) -> GapReport:
    weak, strong = sensitivity_pair(model, u, pert, ensemble, workers)
    return GapReport(weak=weak, strong=strong,
                     gap=weak.mean - strong.mean,
                     se=difference_se(weak, strong),
                     expected_gap=expected_gap)
