"""Weakly and strongly perturbed values of the utility-maximization problem.

Both perturbations move the market coefficients along fixed directions,
mu + tau dmu, sigma + tau dsigma, r + tau dr, or the price of risk directly
along lambda + tau dlambda.  They differ in what the perturbation does to
the underlying randomness:

strong   the driving paths and their law are kept, the coefficients change;
         the value is the plug-in optimum in the perturbed market.
weak     the perturbed price of risk also tilts the measure, with density
         G = E(int (lambda^tau - lambda) dW)_T; under the tilted measure
         W^tau = W - int (lambda^tau - lambda) dt is a Brownian motion and
         the market with price of risk lambda^tau is priced on it.

Monte Carlo uses one set of base paths for every tau (common random
numbers): the weak expectation is pulled back to the base measure through
the weight G, so at tau = 0 the weak and strong estimators coincide path by
path, not just in distribution.

The discrete-time weight is exact: tilting a Gaussian increment by
exp(g dW - g^2 dt / 2) shifts its mean by g dt exactly, so conditionally
centered integrands keep zero mean under the tilted measure.  This is what
lets the logarithmic estimator drop the martingale term int lambda dW from
log Zhat on both sides, which costs nothing in bias and removes the
dominant variance contribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from portsens import utility as ut
from portsens.estimate import ValueEstimate, delta_estimate, mean_estimate
from portsens.market import (CoefficientError, CoefficientProcess,
                             KernelStabilityError, MarketModel,
                             h1_from_values, mpr_from_values)
from portsens.paths import (PathEnsemble, cumulative, ito_sum, map_blocks,
                            quad_sum)
from portsens.solver import bisect_budget


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Direction of a market perturbation.

    Either coefficient directions (any subset of dmu, dsigma, drate) or a
    direct price-of-risk direction dlambda, not both.  Directions are
    coefficient processes with the shapes of the objects they perturb.
    """

    dmu: CoefficientProcess | None = None
    dsigma: CoefficientProcess | None = None
    drate: CoefficientProcess | None = None
    dlambda: CoefficientProcess | None = None
    label: str = ""

    def __post_init__(self):
        parts = [self.dmu, self.dsigma, self.drate]
        if self.dlambda is not None and any(p is not None for p in parts):
            raise CoefficientError("dlambda excludes coefficient directions")
        if self.dlambda is None and not any(p is not None for p in parts):
            raise CoefficientError("perturbation needs at least one direction")
        if not self.label:
            names = [n for n, p in [("dmu", self.dmu), ("dsigma", self.dsigma),
                                    ("drate", self.drate),
                                    ("dlambda", self.dlambda)]
                     if p is not None]
            object.__setattr__(self, "label", "+".join(names))

    @property
    def is_deterministic(self) -> bool:
        return all(p is None or p.is_deterministic
                   for p in (self.dmu, self.dsigma, self.drate, self.dlambda))

    def validate_for(self, model: MarketModel) -> None:
        want = {"dmu": (model.d,), "dsigma": (model.d, model.n),
                "drate": (1,), "dlambda": (model.n,)}
        for name, proc in [("dmu", self.dmu), ("dsigma", self.dsigma),
                           ("drate", self.drate), ("dlambda", self.dlambda)]:
            if proc is not None and proc.shape != want[name]:
                raise CoefficientError(
                    f"{name} must have shape {want[name]}, got {proc.shape}")


@dataclass(frozen=True, eq=False)
class SurfaceRow:
    tau: float
    weak: ValueEstimate
    strong: ValueEstimate

    @property
    def weight_mean(self) -> float:
        return self.weak.extras["weight_mean"]


def _check_solvable(model: MarketModel, pert: PerturbationSpec) -> None:
    """The plug-in optimizer assumes the minimal pricing measure is optimal.

    That holds in complete markets (n = d) and for deterministic
    coefficients; an incomplete market whose perturbed coefficients are
    adapted is out of scope here.
    """
    if model.n == model.d:
        return
    if model.is_deterministic and pert.is_deterministic:
        return
    raise CoefficientError("incomplete market with adapted coefficients: "
                           "perturbed values have no plug-in optimizer")


def _refuse_kernel_break(model: MarketModel, pert: PerturbationSpec,
                         taus, ensemble: PathEnsemble) -> None:
    """Reject volatility directions that move the null space at some tau."""
    if pert.dsigma is None:
        return
    probe_taus = {min(taus), max(taus)} - {0.0}
    if not probe_taus:
        return
    grid = ensemble.grid
    deterministic = (model.sigma.is_deterministic
                     and pert.dsigma.is_deterministic)
    if deterministic:
        W = None
    else:
        dW = ensemble.increments(0, min(16, ensemble.count))
        W = cumulative(dW)
    base_v = model.sigma.evaluate(grid, W)
    dir_v = pert.dsigma.evaluate(grid, W)
    for tau in sorted(probe_taus):
        rep = h1_from_values(base_v, base_v + tau * dir_v, model.d)
        if not rep.ok:
            raise KernelStabilityError(
                f"volatility direction breaks kernel stability at tau={tau:g} "
                f"(full rank: {rep.full_rank}, kernel preserved: "
                f"{rep.kernel_equal}, worst node {rep.worst_node})")


def _surface_arrays(model: MarketModel, pert: PerturbationSpec, taus,
                    ensemble: PathEnsemble, workers=None) -> list[dict]:
    """One streaming pass; per tau the per-path building blocks.

    Returns, for each tau, arrays of shape (M,):
    log_g      log of the measure-change weight G
    log_zw     log pricing density under the tilted measure, discount included
    log_zs     same but on the base measure (strong)
    lin        int r^tau dt + 1/2 int |lambda^tau|^2 dt (for log utility)
    """
    grid = ensemble.grid
    n_tau = len(taus)

    def block(start, stop, dW, W):
        B = stop - start
        dt = grid.dt
        mu_v = model.mu.evaluate(grid, W)
        sg_v = model.sigma.evaluate(grid, W)
        r_v = model.rate.evaluate(grid, W)
        lam0 = mpr_from_values(mu_v, sg_v, r_v, model.cond_cap)
        dmu_v = pert.dmu.evaluate(grid, W) if pert.dmu is not None else None
        dsg_v = (pert.dsigma.evaluate(grid, W)
                 if pert.dsigma is not None else None)
        dr_v = (pert.drate.evaluate(grid, W)
                if pert.drate is not None else None)
        dl_v = (pert.dlambda.evaluate(grid, W)
                if pert.dlambda is not None else None)
        out = []
        for tau in taus:
            if dl_v is not None:
                lam = lam0 + tau * dl_v
                r_tau = r_v
            else:
                mu_t = mu_v if dmu_v is None else mu_v + tau * dmu_v
                sg_t = sg_v if dsg_v is None else sg_v + tau * dsg_v
                r_tau = r_v if dr_v is None else r_v + tau * dr_v
                lam = mpr_from_values(mu_t, sg_t, r_tau, model.cond_cap)
            R = np.sum(r_tau, axis=(-2, -1)) * dt
            Q = quad_sum(lam, lam, dt)
            S = ito_sum(lam, dW)
            delta = lam - lam0
            log_g = ito_sum(delta, dW) - 0.5 * quad_sum(delta, delta, dt)
            log_zw = -S + quad_sum(lam, delta, dt) - 0.5 * Q - R
            log_zs = -S - 0.5 * Q - R
            lin = R + 0.5 * Q
            out.extend(np.broadcast_to(a, (B,)).astype(float, copy=True)
                       for a in (log_g, log_zw, log_zs, lin))
        return tuple(out)

    flat = map_blocks(ensemble, block, workers)
    keys = ("log_g", "log_zw", "log_zs", "lin")
    return [{k: flat[4 * i + j] for j, k in enumerate(keys)}
            for i in range(n_tau)]


def _estimate_value(model: MarketModel, u: ut.UtilitySpec, arrs: dict,
                    tau: float, seed: int, weak: bool) -> ValueEstimate:
    side = "weak" if weak else "strong"
    name = f"{side}-value[tau={tau:g},{u.label}]"
    x0 = model.x0
    if weak:
        g = np.exp(arrs["log_g"])
        extras = {"tau": tau, "weight_mean": float(np.mean(g))}
    else:
        extras = {"tau": tau, "weight_mean": 1.0}
    if u.kind == "log":
        vals = arrs["lin"] + np.log(x0)
        if weak:
            vals = g * vals
        return mean_estimate(vals, seed, name, extras=extras)
    if u.kind == "power":
        q = u.q
        expo = (1.0 - q) * (arrs["log_zw"] if weak else arrs["log_zs"])
        if weak:
            expo = expo + arrs["log_g"]
        v = np.exp(expo)
        scale = u.p * x0 ** (1.0 / u.p)
        return delta_estimate(
            [v], lambda m: scale * m[0] ** (1.0 / q),
            lambda m: np.array([scale / q * m[0] ** (1.0 / q - 1.0)]),
            seed, name, extras=extras)
    # custom utility: budget bisection under the relevant measure; the
    # reported standard error is the plug-in one (multiplier noise ignored)
    z = np.exp(arrs["log_zw"] if weak else arrs["log_zs"])
    w = g if weak else None
    y = bisect_budget(u, z, x0, weights=w)
    xs = np.asarray(ut.inverse_marginal(u, y * z))
    vals = np.asarray(ut.evaluate(u, xs))
    if weak:
        vals = g * vals
    est = mean_estimate(vals, seed, name, extras={**extras, "y": y})
    return est


def value_surface(model: MarketModel, u: ut.UtilitySpec,
                  pert: PerturbationSpec, taus, ensemble: PathEnsemble,
                  workers=None) -> list[SurfaceRow]:
    """Weak and strong values over a tau grid, one path pass in total."""
    taus = [float(t) for t in taus]
    pert.validate_for(model)
    _check_solvable(model, pert)
    _refuse_kernel_break(model, pert, taus, ensemble)
    rows = []
    for tau, arrs in zip(taus, _surface_arrays(model, pert, taus, ensemble,
                                               workers)):
        weak = _estimate_value(model, u, arrs, tau, ensemble.seed, weak=True)
        strong = _estimate_value(model, u, arrs, tau, ensemble.seed,
                                 weak=False)
        rows.append(SurfaceRow(tau=tau, weak=weak, strong=strong))
    return rows


def value_pair(model: MarketModel, u: ut.UtilitySpec, pert: PerturbationSpec,
               tau: float, ensemble: PathEnsemble,
               workers=None) -> tuple[ValueEstimate, ValueEstimate]:
    row = value_surface(model, u, pert, [tau], ensemble, workers)[0]
    return row.weak, row.strong


def weak_value(model: MarketModel, u: ut.UtilitySpec, pert: PerturbationSpec,
               tau: float, ensemble: PathEnsemble, workers=None) \
        -> ValueEstimate:
    return value_pair(model, u, pert, tau, ensemble, workers)[0]


def strong_value(model: MarketModel, u: ut.UtilitySpec, pert: PerturbationSpec,
                 tau: float, ensemble: PathEnsemble, workers=None) \
        -> ValueEstimate:
    return value_pair(model, u, pert, tau, ensemble, workers)[1]


SURFACE_HEADER = ["tau", "u_weak", "se_weak", "u_strong", "se_strong",
                  "weight_mean", "seed"]


def write_surface_csv(path: str, rows: list[SurfaceRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SURFACE_HEADER)
        for r in rows:
            w.writerow([repr(float(r.tau)),
                        repr(r.weak.mean), repr(r.weak.se),
                        repr(r.strong.mean), repr(r.strong.se),
                        repr(r.weight_mean), r.weak.seed])


def read_surface_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k == "seed" else float(v))
                    for k, v in r.items()})
    return out
