"""Market coefficients, market price of risk, and kernel-stability checks.

Coefficients come in three declarative kinds: constant, deterministic
piecewise-constant in time, and adapted indicator of a Brownian coordinate.
All three are essentially bounded by construction and evaluate predictably
(the value at node t_k uses path information up to t_k only).  The adapted
indicator takes its ``high`` value on {W^j_{t_k} < c} and ``low`` elsewhere.

The market price of risk is lambda = sigma^T (sigma sigma^T)^{-1} (mu - r 1).
Volatility perturbations are admissible only when they preserve the null
space of sigma; ``check_h1`` tests this numerically and
``kernel_preserving_perturbation`` constructs directions that satisfy it by
design.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from portsens.paths import TimeGrid


class CoefficientError(ValueError):
    pass


class SingularVolatilityError(RuntimeError):
    """sigma sigma^T is singular or beyond the condition cap at some node."""

    def __init__(self, msg, worst_node=None):
        super().__init__(msg)
        self.worst_node = worst_node


class KernelStabilityError(RuntimeError):
    """A volatility perturbation changes the null space of sigma."""


@dataclass(frozen=True, eq=False)
class CoefficientProcess:
    """One bounded coefficient process of scalar, vector or matrix shape.

    kind 'constant':  values has the declared shape.
    kind 'piecewise': breaks (k,) strictly increasing interior breakpoints,
                      values (k+1, *shape); segment i applies on
                      [breaks[i-1], breaks[i]).
    kind 'indicator': value is high where W^driver < threshold else low,
                      evaluated at the left node of each step.
    """

    kind: str
    shape: tuple[int, ...]
    values: np.ndarray | None = None
    breaks: np.ndarray | None = None
    driver: int = 0
    threshold: float = 0.0
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise", "indicator"):
            raise CoefficientError(f"unknown coefficient kind {self.kind!r}")
        if len(self.shape) > 2:
            raise CoefficientError("coefficients are at most matrix-shaped")
        if self.kind == "constant":
            if self.values is None or self.values.shape != self.shape:
                raise CoefficientError("constant values must match the shape")
        elif self.kind == "piecewise":
            if self.breaks is None or self.values is None:
                raise CoefficientError("piecewise needs breaks and values")
            if self.values.shape != (len(self.breaks) + 1, *self.shape):
                raise CoefficientError("piecewise needs one more value row "
                                       "than breakpoints")
            if len(self.breaks) and not np.all(np.diff(self.breaks) > 0):
                raise CoefficientError("breakpoints must increase strictly")
        else:
            if self.low is None or self.high is None:
                raise CoefficientError("indicator needs low and high values")
            if self.low.shape != self.shape or self.high.shape != self.shape:
                raise CoefficientError("indicator values must match the shape")
            if self.driver < 0:
                raise CoefficientError("driver index must be >= 0")
        if not np.isfinite(self.bound):
            raise CoefficientError("coefficient values must be finite")

    def equals(self, other: "CoefficientProcess") -> bool:
        """Field-by-field equality (dataclass eq is disabled for array fields)."""
        if not isinstance(other, CoefficientProcess):
            return False
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    @property
    def is_deterministic(self) -> bool:
        return self.kind != "indicator"

    @property
    def bound(self) -> float:
        """Uniform bound on |values|, finite for every kind."""
        if self.kind == "indicator":
            return float(max(np.max(np.abs(self.low)), np.max(np.abs(self.high))))
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def evaluate(self, grid: TimeGrid, W: np.ndarray | None = None) -> np.ndarray:
        """Per-node values: (N, *shape) if deterministic, else (B, N, *shape).

        W carries cumulative node values (B, N+1, n); only the left nodes
        t_0 .. t_{N-1} are read, which keeps the evaluation predictable.
        """
        N = grid.steps
        if self.kind == "constant":
            return np.broadcast_to(self.values, (N, *self.shape))
        if self.kind == "piecewise":
            idx = np.searchsorted(self.breaks, grid.left_nodes, side="right")
            return self.values[idx]
        if W is None:
            raise CoefficientError("indicator coefficient needs paths")
        if self.driver >= W.shape[-1]:
            raise CoefficientError(f"driver index {self.driver} out of range "
                                   f"for n={W.shape[-1]}")
        below = W[:, :N, self.driver] < self.threshold  # (B, N)
        below = below.reshape(below.shape + (1,) * len(self.shape))
        return np.where(below, self.high, self.low)

    # -- algebra on deterministic coefficients (used by perturbation builders)

    def _segments(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "constant":
            return np.empty(0), self.values[None]
        if self.kind == "piecewise":
            return self.breaks, self.values
        raise CoefficientError("adapted coefficients have no segment form")

    @staticmethod
    def _from_segments(breaks: np.ndarray, values: np.ndarray,
                       shape: tuple[int, ...]) -> "CoefficientProcess":
        if len(breaks) == 0:
            return constant(values[0].reshape(shape))
        return piecewise(breaks, values.reshape(len(breaks) + 1, *shape))


def constant(values) -> CoefficientProcess:
    vals = np.asarray(values, dtype=float)
    return CoefficientProcess(kind="constant", shape=vals.shape, values=vals)


def scalar_constant(value: float) -> CoefficientProcess:
    return CoefficientProcess(kind="constant", shape=(1,),
                              values=np.asarray([float(value)]))


def piecewise(breaks, values) -> CoefficientProcess:
    breaks = np.asarray(breaks, dtype=float)
    values = np.asarray(values, dtype=float)
    return CoefficientProcess(kind="piecewise", shape=values.shape[1:],
                              breaks=breaks, values=values)


def indicator(driver: int, threshold: float, low, high) -> CoefficientProcess:
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    return CoefficientProcess(kind="indicator", shape=low.shape,
                              driver=driver, threshold=float(threshold),
                              low=low, high=high)


def zeros(shape: tuple[int, ...]) -> CoefficientProcess:
    return CoefficientProcess(kind="constant", shape=shape,
                              values=np.zeros(shape))


def merge_deterministic(a: CoefficientProcess, b: CoefficientProcess, fn) \
        -> CoefficientProcess:
    """Nodewise fn(a, b) of two deterministic coefficients of equal shape."""
    ab, av = a._segments()
    bb, bv = b._segments()
    breaks = np.union1d(ab, bb)
    ai = np.searchsorted(ab, breaks, side="right")
    bi = np.searchsorted(bb, breaks, side="right")
    av_full = av[np.concatenate(([0], ai))]
    bv_full = bv[np.concatenate(([0], bi))]
    out = fn(av_full, bv_full)
    return CoefficientProcess._from_segments(breaks, out, out.shape[1:])


# ---------------------------------------------------------------------------
# coefficient mini-language: const:[...] | pw:t=[...];v=[...] |
# ind:j=<int>;c=<float>;lo=[...];hi=[...]   (matrices row-major)

_NUM_LIST = re.compile(r"\[([^\]]*)\]")


def _parse_list(text: str) -> np.ndarray:
    m = _NUM_LIST.fullmatch(text.strip())
    if m is None:
        raise CoefficientError(f"expected a [..] list, got {text!r}")
    body = m.group(1).strip()
    if not body:
        return np.empty(0)
    try:
        return np.array([float(tok) for tok in body.split(",")])
    except ValueError as exc:
        raise CoefficientError(f"bad number in list {text!r}") from exc


def _fields(body: str) -> dict[str, str]:
    out = {}
    for part in body.split(";"):
        if "=" not in part:
            raise CoefficientError(f"expected key=value, got {part!r}")
        key, val = part.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def parse_coefficient(text: str, shape: tuple[int, ...]) -> CoefficientProcess:
    """Parse the mini-language; flat lists are reshaped row-major to ``shape``."""
    text = text.strip()
    size = int(np.prod(shape, dtype=int))
    if text.startswith("const:"):
        vals = _parse_list(text[len("const:"):])
        if vals.size != size:
            raise CoefficientError(f"const needs {size} entries for shape "
                                   f"{shape}, got {vals.size}")
        return CoefficientProcess(kind="constant", shape=shape,
                                  values=vals.reshape(shape))
    if text.startswith("pw:"):
        f = _fields(text[len("pw:"):])
        if set(f) != {"t", "v"}:
            raise CoefficientError("pw needs exactly t=[...] and v=[...]")
        breaks = _parse_list(f["t"])
        vals = _parse_list(f["v"])
        if vals.size % size or vals.size // size != len(breaks) + 1:
            raise CoefficientError(
                f"pw with {len(breaks)} breakpoints needs "
                f"{(len(breaks) + 1) * size} values, got {vals.size}")
        return piecewise(breaks, vals.reshape(len(breaks) + 1, *shape))
    if text.startswith("ind:"):
        f = _fields(text[len("ind:"):])
        if set(f) != {"j", "c", "lo", "hi"}:
            raise CoefficientError("ind needs j=, c=, lo=[...], hi=[...]")
        lo = _parse_list(f["lo"])
        hi = _parse_list(f["hi"])
        if lo.size != size or hi.size != size:
            raise CoefficientError(f"ind lo/hi need {size} entries each")
        return indicator(int(f["j"]), float(f["c"]),
                         lo.reshape(shape), hi.reshape(shape))
    raise CoefficientError(f"unknown coefficient spec {text!r}")


def _fmt_list(arr: np.ndarray) -> str:
    return "[" + ",".join(repr(float(v)) for v in np.ravel(arr)) + "]"


def format_coefficient(proc: CoefficientProcess) -> str:
    if proc.kind == "constant":
        return "const:" + _fmt_list(proc.values)
    if proc.kind == "piecewise":
        return f"pw:t={_fmt_list(proc.breaks)};v={_fmt_list(proc.values)}"
    return (f"ind:j={proc.driver};c={proc.threshold!r};"
            f"lo={_fmt_list(proc.low)};hi={_fmt_list(proc.high)}")


# ---------------------------------------------------------------------------
# market model and market price of risk

@dataclass(frozen=True)
class MarketModel:
    """d risky assets driven by an n-dimensional Brownian motion, n >= d."""

    d: int
    n: int
    mu: CoefficientProcess
    sigma: CoefficientProcess
    rate: CoefficientProcess = field(default_factory=lambda: scalar_constant(0.0))
    x0: float = 1.0
    cond_cap: float = 1e8

    def __post_init__(self):
        if self.n < self.d:
            raise ValueError("need n >= d")
        if not self.x0 > 0:
            raise ValueError("initial wealth must be positive")
        if self.mu.shape != (self.d,):
            raise ValueError(f"mu must have shape ({self.d},)")
        if self.sigma.shape != (self.d, self.n):
            raise ValueError(f"sigma must have shape ({self.d}, {self.n})")
        if self.rate.shape != (1,):
            raise ValueError("rate must have shape (1,)")

    @property
    def is_deterministic(self) -> bool:
        return (self.mu.is_deterministic and self.sigma.is_deterministic
                and self.rate.is_deterministic)


@dataclass(frozen=True, eq=False)
class MPRProcess:
    """Per-node market price of risk, (N, n) or (B, N, n)."""

    values: np.ndarray
    worst_cond: float


def _gram_cond(S: np.ndarray) -> np.ndarray:
    """2-norm condition numbers of a (..., d, d) stack of Gram matrices."""
    d = S.shape[-1]
    if d == 1:
        return np.ones(S.shape[:-2])
    if d == 2:
        half_tr = 0.5 * (S[..., 0, 0] + S[..., 1, 1])
        det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
        disc = np.sqrt(np.maximum(half_tr**2 - det, 0.0))
        lo = half_tr - disc
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(lo > 0, (half_tr + disc) / lo, np.inf)
    ev = np.linalg.eigvalsh(S)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ev[..., 0] > 0, ev[..., -1] / ev[..., 0], np.inf)


def _worst_node(cond: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(cond))
    if cond.ndim == 1:
        return (0, flat)
    return tuple(int(v) for v in np.unravel_index(flat, cond.shape))  # (path, k)


def mpr_from_values(mu_v: np.ndarray, sigma_v: np.ndarray, rate_v: np.ndarray,
                    cond_cap: float = 1e8) -> np.ndarray:
    """lambda = sigma^T (sigma sigma^T)^{-1} (mu - r 1) from per-node values.

    mu_v is (..., d), sigma_v (..., d, n), rate_v (..., 1); leading axes
    broadcast.  Raises SingularVolatilityError when the Gram matrix is
    singular or its condition number exceeds the cap at any node.
    """
    excess = mu_v - rate_v
    d = sigma_v.shape[-2]
    if d == 1:
        gram = np.sum(sigma_v[..., 0, :] ** 2, axis=-1)
        bad = ~(gram > 0)
        if np.any(bad):
            raise SingularVolatilityError("sigma sigma^T singular",
                                          _worst_node(np.where(bad, np.inf, 1.0)))
        return sigma_v[..., 0, :] * (excess[..., 0] / gram)[..., None]
    S = sigma_v @ np.swapaxes(sigma_v, -1, -2)
    cond = _gram_cond(S)
    worst = float(np.max(cond))
    if not worst < cond_cap:
        raise SingularVolatilityError(
            f"sigma sigma^T condition {worst:g} exceeds cap {cond_cap:g}",
            _worst_node(cond))
    excess_b = np.broadcast_arrays(excess, S[..., 0])[0]
    x = np.linalg.solve(np.broadcast_to(S, excess_b.shape + (S.shape[-1],)),
                        excess_b[..., None])[..., 0]
    return np.einsum("...dn,...d->...n", sigma_v, x)


def market_price_of_risk(model: MarketModel, W: np.ndarray | None,
                         grid: TimeGrid) -> MPRProcess:
    """Market price of risk on the grid; W may be None for deterministic models."""
    mu_v = model.mu.evaluate(grid, W)
    sigma_v = model.sigma.evaluate(grid, W)
    rate_v = model.rate.evaluate(grid, W)
    vals = mpr_from_values(mu_v, sigma_v, rate_v, model.cond_cap)
    if model.d == 1:
        worst = 1.0
    else:
        S = sigma_v @ np.swapaxes(sigma_v, -1, -2)
        worst = float(np.max(_gram_cond(S)))
    return MPRProcess(values=vals, worst_cond=worst)


def dlambda_direction(model: MarketModel, dmu: CoefficientProcess | None,
                      dsigma: CoefficientProcess | None,
                      W: np.ndarray | None, grid: TimeGrid,
                      dr: CoefficientProcess | None = None) -> np.ndarray:
    """Directional derivative of the market price of risk.

    With S = sigma sigma^T and excess = mu - r 1:

        Dlambda = sigma^T S^{-1} (dmu - dr 1)
                  + dsigma^T S^{-1} excess
                  - sigma^T S^{-1} (sigma dsigma^T + dsigma sigma^T) S^{-1} excess

    The optional rate direction enters exactly as a drift direction -dr 1.
    """
    d, n = model.d, model.n
    sigma_v = model.sigma.evaluate(grid, W)
    mu_v = model.mu.evaluate(grid, W)
    rate_v = model.rate.evaluate(grid, W)
    excess = mu_v - rate_v

    dmu_v = None if dmu is None else dmu.evaluate(grid, W)
    if dr is not None:
        drv = dr.evaluate(grid, W)
        drift_dir = -drv * np.ones(d)  # (..., 1) times (d,)
        dmu_v = drift_dir if dmu_v is None else dmu_v + drift_dir
    dsig_v = None if dsigma is None else dsigma.evaluate(grid, W)

    sigmaT = np.swapaxes(sigma_v, -1, -2)
    S = sigma_v @ sigmaT

    def solve(rhs):  # S^{-1} rhs for (..., d) right-hand sides
        if d == 1:
            return rhs / S[..., 0]
        rhs_b = np.broadcast_arrays(rhs, S[..., 0])[0]
        return np.linalg.solve(np.broadcast_to(S, rhs_b.shape + (d,)),
                               rhs_b[..., None])[..., 0]

    out = None
    if dmu_v is not None:
        out = np.einsum("...nd,...d->...n", sigmaT, solve(dmu_v))
    if dsig_v is not None:
        w = solve(excess)  # S^{-1} excess
        dsigT = np.swapaxes(dsig_v, -1, -2)
        term = np.einsum("...nd,...d->...n", dsigT, w)
        mixed = (np.einsum("...dn,...en->...de", sigma_v, dsig_v)
                 + np.einsum("...dn,...en->...de", dsig_v, sigma_v))
        term = term - np.einsum("...nd,...d->...n", sigmaT,
                                solve(np.einsum("...de,...e->...d", mixed, w)))
        out = term if out is None else out + term
    if out is None:
        out = np.zeros(sigma_v.shape[:-2] + (n,))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# kernel stability

@dataclass(frozen=True)
class H1Report:
    full_rank: bool
    inv_bound: float
    kernel_equal: bool
    worst_node: tuple[int, int]

    @property
    def ok(self) -> bool:
        return self.full_rank and self.kernel_equal


def _numerical_rank(s: np.ndarray, tol: float) -> np.ndarray:
    """Ranks from singular-value stacks (..., k) at a relative threshold."""
    cut = tol * s[..., :1]
    return np.sum(s > cut, axis=-1)


def check_h1(sigma_base: CoefficientProcess, sigma_pert: CoefficientProcess,
             grid: TimeGrid, W: np.ndarray | None = None,
             tol: float = 1e-10, max_paths: int = 64) -> H1Report:
    """Full rank of the base volatility plus null-space equality of the pair.

    Kernel equality is decided by comparing the numerical rank of the stacked
    (2d, n) matrix with the individual ranks at every checked node.  For
    adapted volatilities at most ``max_paths`` paths are checked.
    """
    if sigma_base.shape != sigma_pert.shape:
        raise CoefficientError("volatility shapes differ")
    if W is not None and W.shape[0] > max_paths:
        W = W[:max_paths]
    if W is None and not (sigma_base.is_deterministic
                          and sigma_pert.is_deterministic):
        raise CoefficientError("adapted volatility check needs paths")
    return h1_from_values(sigma_base.evaluate(grid, W),
                          sigma_pert.evaluate(grid, W),
                          sigma_base.shape[0], tol)


def h1_from_values(base_v: np.ndarray, pert_v: np.ndarray, d: int,
                   tol: float = 1e-10) -> H1Report:
    """Same check on already-evaluated volatility node values."""
    base_v, pert_v = np.broadcast_arrays(base_v, pert_v)

    s_base = np.linalg.svd(base_v, compute_uv=False)
    s_pert = np.linalg.svd(pert_v, compute_uv=False)
    stacked = np.concatenate((base_v, pert_v), axis=-2)
    s_stack = np.linalg.svd(stacked, compute_uv=False)

    rank_base = _numerical_rank(s_base, tol)
    rank_pert = _numerical_rank(s_pert, tol)
    # stacked spectrum is compared against the base scale so that a rank-
    # deficient pair cannot hide behind its own tiny leading singular value
    cut = tol * s_base[..., :1]
    rank_stack = np.sum(s_stack > cut, axis=-1)

    full_rank = bool(np.all(rank_base == d))
    kernel_equal = bool(np.all((rank_stack == rank_base)
                               & (rank_pert == rank_base)))
    smin = s_base[..., -1]
    with np.errstate(divide="ignore"):
        inv_norm = np.where(smin > 0, 1.0 / smin**2, np.inf)
    worst = _worst_node(inv_norm)
    return H1Report(full_rank=full_rank, inv_bound=float(np.max(inv_norm)),
                    kernel_equal=kernel_equal, worst_node=worst)


def kernel_preserving_perturbation(sigma_base: CoefficientProcess,
                                   A: CoefficientProcess, tau: float) \
        -> tuple[CoefficientProcess, float]:
    """Volatility sigma + tau * A (sigma sigma^T)^{-1} sigma and its safe bound.

    The construction keeps Ker(sigma) for every |tau| below the returned
    bound 1 / max_t ||A (sigma sigma^T)^{-1}||_2, because the perturbed matrix
    is (I + tau A S^{-1}) sigma with the leading factor invertible there.
    Only deterministic sigma and A are supported; the result is again a
    deterministic coefficient.
    """
    if not (sigma_base.is_deterministic and A.is_deterministic):
        raise CoefficientError("kernel-preserving construction needs "
                               "deterministic sigma and direction")
    d, n = sigma_base.shape
    if A.shape != (d, d):
        raise CoefficientError(f"direction must be ({d}, {d})")

    def build(sig, a):
        Sinv = np.linalg.inv(sig @ np.swapaxes(sig, -1, -2))
        return sig + tau * (a @ Sinv @ sig)

    out = merge_deterministic(sigma_base, A, build)
    # safe bound from the same segment values
    sb, sv = sigma_base._segments()
    ab, av = A._segments()
    breaks = np.union1d(sb, ab)
    si = np.concatenate(([0], np.searchsorted(sb, breaks, side="right")))
    ai = np.concatenate(([0], np.searchsorted(ab, breaks, side="right")))
    worst = 0.0
    for i, j in zip(si, ai):
        S = sv[i] @ sv[i].T
        M = av[j] @ np.linalg.inv(S)
        worst = max(worst, float(np.linalg.norm(M, ord=2)))
    safe = np.inf if worst == 0 else 1.0 / worst
    if abs(tau) >= safe:
        warnings.warn(f"tau={tau} is at or beyond the rank-safe bound {safe:g}",
                      RuntimeWarning, stacklevel=2)
    return out, safe
