"""Optimal terminal wealth and value of the base utility-maximization problem.

The martingale method reduces the dynamic problem to a static one: maximize
E[U(X)] over terminal payoffs X subject to the budget E[Zhat X] = x0, where
Zhat is the pricing density built from the market price of risk (and the
rate discount when there is one).  The optimizer is X* = I(y Zhat) with
I = (U')^{-1} and y > 0 solving the budget equation.

For power utility U(x) = p x^{1/p} everything is explicit:

    X* = x0 Zhat^{-q} / E[Zhat^{1-q}],      q = p/(p-1),
    value = p x0^{1/p} E[Zhat^{1-q}]^{1/q}.

On a fixed ensemble the budget is normalized by the sample mean of
Zhat^{1-q}, so mean(Zhat X*) = x0 holds exactly and the sample mean of
U(X*) coincides with the plug-in value formula path by path.

The density uses the minimal measure (kernel component nu = 0).  For
deterministic coefficients this is the exact dual optimizer: any
deterministic kernel component nu adds exp(q(q-1)/2 int |nu|^2 dt) >= 1 to
E[Zhat^{1-q}] because nu is orthogonal to the price of risk pointwise.
Incomplete markets with stochastic coefficients have no closed-form dual
optimizer; there the caller supplies externally computed optimal-wealth
samples instead.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from portsens import utility as ut
from portsens.estimate import ValueEstimate, delta_estimate, mean_estimate
from portsens.market import MarketModel, mpr_from_values
from portsens.paths import (PathEnsemble, PathFunctional, cumulative,
                            log_doleans, map_blocks, quad_sum)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OptimalWealth:
    """Optimal terminal wealth samples with multiplier and density."""

    xstar: np.ndarray
    y: float
    z: np.ndarray  # pricing density per path, discount included
    value: ValueEstimate

    def __post_init__(self):
        if np.any(self.xstar <= 0):
            raise SolverError("optimal wealth must be strictly positive")


@dataclass(frozen=True)
class ClosedFormValue:
    value: float
    formula: str
    inputs_digest: str


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:12]


def log_density_terms(model: MarketModel, ensemble: PathEnsemble,
                      workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-path (log E(-int lambda dW), int r dt) in one streaming pass."""
    grid = ensemble.grid

    def block(start, stop, dW, W):
        lam = mpr_from_values(model.mu.evaluate(grid, W),
                              model.sigma.evaluate(grid, W),
                              model.rate.evaluate(grid, W), model.cond_cap)
        logz = log_doleans(-lam, dW, grid.dt)
        rv = model.rate.evaluate(grid, W)
        R = np.sum(rv, axis=(-2, -1)) * grid.dt
        B = stop - start
        return (np.broadcast_to(logz, (B,)).copy(),
                np.broadcast_to(R, (B,)).copy())

    return map_blocks(ensemble, block, workers)


def state_price_density(model: MarketModel, ensemble: PathEnsemble,
                        workers: int | None = None) -> PathFunctional:
    """E(-int lambda dW)_T per path, with the minimal-measure choice nu = 0.

    The rate discount is not included here; the solver applies it where the
    budget needs it.
    """
    logz, _ = log_density_terms(model, ensemble, workers)
    return PathFunctional(np.exp(logz), "state-price-density")


def _power_stats(logzhat: np.ndarray, q: float,
                 log_weights: np.ndarray | None = None) -> np.ndarray:
    """Per-path Zhat^{1-q} (times weights), computed in log space."""
    expo = (1.0 - q) * logzhat
    if log_weights is not None:
        expo = expo + log_weights
    return np.exp(expo)


def optimal_terminal_wealth(model: MarketModel, u: ut.UtilitySpec,
                            ensemble: PathEnsemble,
                            xstar: np.ndarray | None = None,
                            workers: int | None = None) -> OptimalWealth:
    """Solve the static problem on the ensemble, or wrap external samples.

    Supported directly: power and log utility in a complete market (n = d)
    or under deterministic coefficients, plus custom utilities via budget
    bisection.  For anything else pass ``xstar`` samples computed elsewhere;
    they are validated against the budget and wrapped unchanged.
    """
    logz, R = log_density_terms(model, ensemble, workers)
    logzhat = logz - R
    zhat = np.exp(logzhat)

    if xstar is not None:
        xstar = np.asarray(xstar, dtype=float)
        if xstar.shape != zhat.shape:
            raise SolverError("external optimal wealth has wrong path count")
        budget = float(np.mean(zhat * xstar))
        if abs(budget - model.x0) > 0.05 * model.x0:
            raise SolverError(f"external optimal wealth misses the budget: "
                              f"mean(Z X) = {budget:g} vs x0 = {model.x0:g}")
        val = mean_estimate(np.asarray(ut.evaluate(u, xstar)), ensemble.seed,
                            f"value[external,{u.label}]")
        y = float("nan")
        return OptimalWealth(xstar=xstar, y=y, z=zhat, value=val)

    if not (model.n == model.d or model.is_deterministic):
        raise SolverError("incomplete market with stochastic coefficients: "
                          "supply external optimal-wealth samples")

    x0 = model.x0
    if u.kind == "power":
        q = u.q
        v = _power_stats(logzhat, q)
        m0 = float(np.mean(v))
        xs = x0 * np.exp(-q * logzhat) / m0
        y = (m0 / x0) ** (1.0 / q)
        # mean U(X*) equals p x0^{1/p} m0^{1/q} exactly; the delta method
        # tracks the nonlinearity of the m0 power
        val = delta_estimate(
            [v], lambda m: u.p * x0 ** (1 / u.p) * m[0] ** (1 / q),
            lambda m: np.array([u.p * x0 ** (1 / u.p) / q
                                * m[0] ** (1 / q - 1)]),
            ensemble.seed, f"value[power p={u.p:g}]")
    elif u.kind == "log":
        xs = x0 / zhat
        y = 1.0 / x0
        val = mean_estimate(np.log(x0) - logzhat, ensemble.seed, "value[log]")
    else:
        y = bisect_budget(u, zhat, x0)
        xs = np.asarray(ut.inverse_marginal(u, y * zhat))
        val = mean_estimate(np.asarray(ut.evaluate(u, xs)), ensemble.seed,
                            f"value[{u.label}]")
    return OptimalWealth(xstar=xs, y=y, z=zhat, value=val)


def bisect_budget(u: ut.UtilitySpec, zhat: np.ndarray, x0: float,
                  weights: np.ndarray | None = None,
                  rel_tol: float = 1e-12, max_iter: int = 200) -> float:
    """Solve mean(w Zhat I(y Zhat)) = x0; the map is strictly decreasing in y."""

    def budget(y):
        b = zhat * np.asarray(ut.inverse_marginal(u, y * zhat))
        if weights is not None:
            b = weights * b
        return float(np.mean(b)) - x0

    lo = hi = float(ut.derivative(u, x0))
    for _ in range(200):
        if budget(hi) < 0:
            break
        hi *= 2.0
    else:
        raise SolverError("budget bracket expansion failed (upper)")
    for _ in range(200):
        if budget(lo) > 0:
            break
        lo /= 2.0
    else:
        raise SolverError("budget bracket expansion failed (lower)")
    for _ in range(max_iter):
        mid = np.sqrt(lo * hi)
        if budget(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            break
    return float(np.sqrt(lo * hi))


# ---------------------------------------------------------------------------
# closed forms

def integrate_product(a, b, T: float) -> float:
    """Exact int_0^T sum(a(t) * b(t)) dt for deterministic coefficients.

    With a = b this is the squared L2 norm; entries are summed, so matrix
    coefficients integrate their Frobenius inner product.
    """
    if not (a.is_deterministic and b.is_deterministic):
        raise SolverError("needs deterministic coefficients")
    breaks = np.unique(np.concatenate([a._segments()[0], b._segments()[0]]))
    breaks = breaks[(breaks > 0) & (breaks < T)]
    edges = np.concatenate(([0.0], breaks, [T]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        g = _PointGrid(0.5 * (lo + hi))
        va = a.evaluate(g, None)[0]
        vb = b.evaluate(g, None)[0]
        total += float(np.sum(va * vb)) * (hi - lo)
    return total


def _integral(proc, T: float) -> float:
    breaks, values = proc._segments()
    edges = np.concatenate(([0.0], np.clip(breaks, 0.0, T), [T]))
    lengths = np.diff(edges)
    vals = np.array([float(np.sum(np.asarray(v))) for v in values])
    return float(np.sum(vals * lengths))


def deterministic_mpr_integral_sq(model: MarketModel, T: float) -> float:
    """int_0^T |lambda|^2 dt for deterministic coefficients, exact in time."""
    if not model.is_deterministic:
        raise SolverError("needs deterministic coefficients")
    # evaluate on the union of all breakpoints, then integrate piecewise
    breaks = np.unique(np.concatenate([
        p._segments()[0] for p in (model.mu, model.sigma, model.rate)]))
    breaks = breaks[(breaks > 0) & (breaks < T)]
    edges = np.concatenate(([0.0], breaks, [T]))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        t = 0.5 * (a + b)
        grid1 = _PointGrid(t)
        lam = mpr_from_values(model.mu.evaluate(grid1, None),
                              model.sigma.evaluate(grid1, None),
                              model.rate.evaluate(grid1, None), model.cond_cap)
        total += float(np.sum(lam**2)) * (b - a)
    return total


class _PointGrid:
    """Single-node stand-in so coefficients can be evaluated at one time."""

    def __init__(self, t: float):
        self.steps = 1
        self._t = t

    @property
    def left_nodes(self):
        return np.array([self._t])


def value_closed_form(model: MarketModel, u: ut.UtilitySpec, T: float,
                      ensemble: PathEnsemble | None = None,
                      workers: int | None = None) -> ClosedFormValue:
    """Value of the base problem where a closed form exists.

    log utility: log x0 + int r dt + 1/2 E int |lambda|^2 dt (the expectation
    is exact for deterministic coefficients and a Monte Carlo mean otherwise,
    in which case an ensemble is required).
    power utility, deterministic coefficients:
    p x0^{1/p} exp((1/p) int r dt) exp((q-1)/2 int |lambda|^2 dt).
    """
    digest = _digest(model.d, model.n, u.label, model.x0, T)
    if u.kind == "log":
        if model.is_deterministic:
            lam2 = deterministic_mpr_integral_sq(model, T)
            rint = _integral(model.rate, T)
            return ClosedFormValue(float(np.log(model.x0) + rint + 0.5 * lam2),
                                   "log-deterministic", digest)
        if ensemble is None:
            raise SolverError("adapted coefficients need an ensemble")
        grid = ensemble.grid

        def block(start, stop, dW, W):
            lam = mpr_from_values(model.mu.evaluate(grid, W),
                                  model.sigma.evaluate(grid, W),
                                  model.rate.evaluate(grid, W), model.cond_cap)
            rv = model.rate.evaluate(grid, W)
            out = (0.5 * quad_sum(lam, lam, grid.dt)
                   + np.sum(rv, axis=(-2, -1)) * grid.dt)
            return np.broadcast_to(out, (stop - start,)).copy()

        vals = map_blocks(ensemble, block, workers)
        return ClosedFormValue(float(np.log(model.x0) + np.mean(vals)),
                               "log-mc", digest)
    if u.kind == "power":
        if not model.is_deterministic:
            raise SolverError("power closed form needs deterministic "
                              "coefficients")
        lam2 = deterministic_mpr_integral_sq(model, T)
        rint = _integral(model.rate, T)
        val = (u.p * model.x0 ** (1 / u.p) * np.exp(rint / u.p)
               * np.exp((u.q - 1.0) / 2.0 * lam2))
        return ClosedFormValue(float(val), f"power-deterministic p={u.p:g}",
                               digest)
    raise SolverError(f"no closed form for utility {u.label!r}")


# ---------------------------------------------------------------------------
# optimal-wealth CSV exchange

def save_xstar(path: str, xstar: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_index", "xstar"])
        for i, v in enumerate(np.ravel(xstar)):
            w.writerow([i, repr(float(v))])


def load_xstar(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["path_index", "xstar"]:
        raise SolverError(f"{path}: expected header path_index,xstar")
    idx = np.array([int(r[0]) for r in rows[1:]])
    vals = np.array([float(r[1]) for r in rows[1:]])
    if not np.array_equal(idx, np.arange(len(idx))):
        raise SolverError(f"{path}: path_index must be 0..M-1 in order")
    return vals
