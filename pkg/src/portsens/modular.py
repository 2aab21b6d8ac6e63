"""Budget and dual functionals on terminal payoffs, with their norms.

A market with price of risk lambda and null-space directions nu (sigma
nu = 0 node by node) prices payoffs through the density family
Y^nu = exp(-int r dt) E(-int (lambda + nu) dW)_T.  Two convex functionals
on payoff samples Z arise:

    J(Z) = max over the family of mean( Y^nu * U^{-1}(|Z|) )
    I(Z) = min over the family of mean( |Z| * V(Y^nu / |Z|) )

with V the convex conjugate of the utility.  J is the cost of replicating
the wealth profile whose utility is Z, so J(U(X*)) equals the initial
wealth exactly at the optimizer; I is its dual companion.  For power
utility I has the explicit form (p - 1) * mean(Y^{1-q} |Z|^q), and the
induced norms simplify to weighted q- and p-means:

    norm_I(Z) = (min over family of mean Y^{1-q} |Z|^q)^{1/q}
    norm_J(X) = (max over family of mean Y |X|^p)^{1/p}

They pair in a Hölder inequality |mean(YZ)| <= norm_I(Y) * norm_J(Z) that
holds exactly on the empirical measure, by the pointwise factorization
|YZ| = (W^{-1/p}|Y|) (W^{1/p}|Z|) with the density as weight.

The family here is a finite user-declared list (default: zero only), so
the reported norm_I is an upper bound and norm_J a lower bound for their
full-family counterparts; enlarging the family tightens both
monotonically.  Generic Luxemburg and Amemiya norms of any convex modular
evaluator are provided as well; note the Amemiya norm at k = 1 gives
amemiya(J, U(X*)) <= 1 + J(U(X*)) = 1 + x0, the budget-set bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from portsens import utility as ut
from portsens.estimate import ValueEstimate, mean_estimate
from portsens.market import (CoefficientProcess, MarketModel,
                             mpr_from_values, zeros)
from portsens.paths import (PathEnsemble, PathFunctional, ito_sum,
                            map_blocks, quad_sum)


class ModularError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModularFunctional:
    """Market, utility and a finite family of null-space directions."""

    model: MarketModel
    utility: ut.UtilitySpec
    nu_family: tuple = ()
    kernel_tol: float = 1e-10

    def __post_init__(self):
        fam = tuple(self.nu_family) or (zeros((self.model.n,)),)
        for nu in fam:
            if not isinstance(nu, CoefficientProcess) \
                    or nu.shape != (self.model.n,):
                raise ModularError(
                    f"family members must be ({self.model.n},) coefficient "
                    "processes")
        object.__setattr__(self, "nu_family", fam)


def _validate_kernel(mf: ModularFunctional, grid, W) -> None:
    """Every family member must lie in the null space of sigma nodewise."""
    sg_v = mf.model.sigma.evaluate(grid, W)
    scale = float(np.max(np.abs(sg_v))) or 1.0
    for i, nu in enumerate(mf.nu_family):
        nu_v = nu.evaluate(grid, W)
        prod = np.einsum("...dn,...n->...d", sg_v, nu_v)
        worst = float(np.max(np.abs(prod))) if prod.size else 0.0
        nu_scale = float(np.max(np.abs(nu_v))) if nu_v.size else 0.0
        if worst > mf.kernel_tol * max(1.0, scale * nu_scale):
            raise ModularError(
                f"family member {i} leaves the volatility null space "
                f"(max |sigma nu| = {worst:g})")


def density_logs(mf: ModularFunctional, ensemble: PathEnsemble,
                 workers=None) -> np.ndarray:
    """log Y^nu per (family member, path), discount included; one pass."""
    grid = ensemble.grid
    model = mf.model
    n_fam = len(mf.nu_family)

    def block(start, stop, dW, W):
        B = stop - start
        dt = grid.dt
        _validate_kernel(mf, grid, W)
        lam = mpr_from_values(model.mu.evaluate(grid, W),
                              model.sigma.evaluate(grid, W),
                              model.rate.evaluate(grid, W), model.cond_cap)
        R = np.sum(model.rate.evaluate(grid, W), axis=(-2, -1)) * dt
        out = []
        for nu in mf.nu_family:
            gamma = lam + nu.evaluate(grid, W)
            logy = (-R - ito_sum(gamma, dW)
                    - 0.5 * quad_sum(gamma, gamma, dt))
            out.append(np.broadcast_to(logy, (B,)).astype(float, copy=True))
        return tuple(out)

    flat = map_blocks(ensemble, block, workers)
    if n_fam == 1 and not isinstance(flat, tuple):
        flat = (flat,)
    return np.stack(flat)


def _payoff_values(Z, count: int) -> np.ndarray:
    vals = Z.values if isinstance(Z, PathFunctional) else np.asarray(Z, float)
    if vals.shape != (count,):
        raise ModularError(f"payoff must have one value per path "
                           f"({count}), got shape {vals.shape}")
    return vals


def j_functional(Z, mf: ModularFunctional, ensemble: PathEnsemble,
                 workers=None) -> ValueEstimate:
    """max over the family of mean(Y^nu * U^{-1}(|Z|))."""
    vals = np.abs(_payoff_values(Z, ensemble.count))
    wealth = np.asarray(ut.inverse(mf.utility, vals))
    logs = density_logs(mf, ensemble, workers)
    best, best_i = None, -1
    for i in range(logs.shape[0]):
        est = mean_estimate(np.exp(logs[i]) * wealth, ensemble.seed,
                            f"j[nu={i}]")
        if best is None or est.mean > best.mean:
            best, best_i = est, i
    return ValueEstimate(mean=best.mean, se=best.se, count=best.count,
                         seed=best.seed, estimator="j",
                         influence=best.influence,
                         extras={"argmax_member": best_i})


def i_modular(Z, mf: ModularFunctional, ensemble: PathEnsemble,
              workers=None) -> ValueEstimate:
    """min over the family of mean(|Z| * V(Y^nu / |Z|))."""
    u = mf.utility
    vals = np.abs(_payoff_values(Z, ensemble.count))
    logs = density_logs(mf, ensemble, workers)
    best, best_i = None, -1
    for i in range(logs.shape[0]):
        y = np.exp(logs[i])
        if u.kind == "power":
            # |Z| V(Y/|Z|) = (p-1) Y^{1-q} |Z|^q, continuous through Z = 0;
            # overflow to inf is caught by the finiteness check below
            with np.errstate(over="ignore"):
                terms = ((u.p - 1.0) * np.exp((1.0 - u.q) * logs[i])
                         * vals**u.q)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                conj = np.asarray(ut.conjugate(u, np.where(vals > 0,
                                                           y / np.maximum(vals, 1e-300),
                                                           1.0)))
            terms = np.where(vals > 0, vals * conj, 0.0)
        if not np.all(np.isfinite(terms)):
            raise ModularError("conjugate moment diverges on the sample")
        est = mean_estimate(terms, ensemble.seed, f"i[nu={i}]")
        if best is None or est.mean < best.mean:
            best, best_i = est, i
    return ValueEstimate(mean=best.mean, se=best.se, count=best.count,
                         seed=best.seed, estimator="i",
                         influence=best.influence,
                         extras={"argmin_member": best_i})


def _require_power(u: ut.UtilitySpec, what: str) -> None:
    if u.kind != "power":
        raise ModularError(f"{what} uses the explicit power-utility form")


def norm_I(Z, mf: ModularFunctional, ensemble: PathEnsemble,
           workers=None) -> float:
    """(min over family of mean Y^{1-q} |Z|^q)^{1/q}."""
    _require_power(mf.utility, "norm_I")
    q = mf.utility.q
    vals = np.abs(_payoff_values(Z, ensemble.count))
    logs = density_logs(mf, ensemble, workers)
    with np.errstate(over="ignore"):
        moments = [float(np.mean(np.exp((1.0 - q) * logs[i]) * vals**q))
                   for i in range(logs.shape[0])]
    if not all(math.isfinite(m) for m in moments):
        raise ModularError("q-moment diverges on the sample")
    return min(moments) ** (1.0 / q)


def norm_J(X, mf: ModularFunctional, ensemble: PathEnsemble,
           workers=None) -> float:
    """(max over family of mean Y |X|^p)^{1/p}."""
    _require_power(mf.utility, "norm_J")
    p = mf.utility.p
    vals = np.abs(_payoff_values(X, ensemble.count))
    logs = density_logs(mf, ensemble, workers)
    with np.errstate(over="ignore"):
        moments = [float(np.mean(np.exp(logs[i]) * vals**p))
                   for i in range(logs.shape[0])]
    if not all(math.isfinite(m) for m in moments):
        raise ModularError("p-moment diverges on the sample")
    return max(moments) ** (1.0 / p)


def j_evaluator(mf: ModularFunctional, ensemble: PathEnsemble, workers=None):
    """The J modular as a plain callable on payoff samples.

    Captures the density samples once, so it can be handed to the generic
    Luxemburg/Amemiya norms.
    """
    logs = density_logs(mf, ensemble, workers)
    y = np.exp(logs)

    def F(z: np.ndarray) -> float:
        wealth = np.asarray(ut.inverse(mf.utility, np.abs(z)))
        return float(np.max(np.mean(y * wealth, axis=1)))

    return F


def luxemburg_norm(F, Z, rel_tol: float = 1e-12, max_iter: int = 200) -> float:
    """inf over beta > 0 with F(Z / beta) <= 1, by bisection.

    F must be convex with F(0) = 0, so F(Z / beta) is nonincreasing in
    beta and the set {F <= 1} is a half line.
    """
    z = np.asarray(Z, dtype=float)
    if not np.any(z):
        return 0.0

    def ok(beta):
        v = F(z / beta)
        if math.isnan(v):
            raise ModularError("modular evaluated to nan")
        return v <= 1.0

    good = 1.0
    for _ in range(max_iter):
        if ok(good):
            break
        good *= 2.0
    else:
        raise ModularError("no finite scale brings the modular below 1")
    bad = good / 2.0
    for _ in range(max_iter):
        if not ok(bad):
            break
        good = bad
        bad /= 2.0
        if bad < 1e-300:
            return 0.0  # below 1 at every scale
    for _ in range(max_iter):
        mid = math.sqrt(bad * good)
        if ok(mid):
            good = mid
        else:
            bad = mid
        if good - bad <= rel_tol * good:
            break
    return good


def amemiya_norm(F, Z, rel_tol: float = 1e-12, max_iter: int = 200) -> float:
    """min over k > 0 of (1 + F(k Z)) / k, golden-section on log k.

    The objective is unimodal in log k for convex F, so a coarse scan
    brackets the minimum and golden-section pins it down.
    """
    z = np.asarray(Z, dtype=float)
    if not np.any(z):
        return 0.0

    def g(t):
        v = F(math.exp(t) * z)
        if math.isnan(v):
            raise ModularError("modular evaluated to nan")
        return (1.0 + v) * math.exp(-t) if math.isfinite(v) else math.inf

    ts = np.linspace(-45.0, 45.0, 181)
    gs = [g(t) for t in ts]
    k = int(np.argmin(gs))
    if k == 0 or k == len(ts) - 1:
        raise ModularError("Amemiya norm has no interior minimum in range")
    a, b = float(ts[k - 1]), float(ts[k + 1])

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    g_c, g_d = g(c), g(d)
    for _ in range(max_iter):
        if g_c < g_d:
            b, d, g_d = d, c, g_c
            c = b - invphi * (b - a)
            g_c = g(c)
        else:
            a, c, g_c = c, d, g_d
            d = a + invphi * (b - a)
            g_d = g(d)
        if b - a <= rel_tol:
            break
    return g(0.5 * (a + b))


@dataclass(frozen=True)
class HolderReport:
    lhs: float
    rhs: float
    slack: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.slack)


def holder_check(Y, Z, mf: ModularFunctional, ensemble: PathEnsemble,
                 slack: float = 1e-9, workers=None) -> HolderReport:
    """|mean(Y Z)| <= norm_I(Y) * norm_J(Z), exact on the sample."""
    yv = _payoff_values(Y, ensemble.count)
    zv = _payoff_values(Z, ensemble.count)
    lhs = abs(float(np.mean(yv * zv)))
    rhs = (norm_I(yv, mf, ensemble, workers)
           * norm_J(zv, mf, ensemble, workers))
    return HolderReport(lhs=lhs, rhs=rhs, slack=slack)
