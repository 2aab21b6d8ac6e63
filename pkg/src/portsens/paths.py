"""Seeded Brownian path ensembles with streaming Ito quadrature.

An ensemble is a recipe, not an array: path i draws its N x n increments from
a dedicated Philox stream keyed by (seed, i), so any path can be regenerated
bit-identically regardless of how paths are partitioned into blocks or how
many workers process them.  Consumers stream over blocks of paths, reduce
each block to a handful of per-path scalars, and concatenate those in path
order; all cross-path reductions (means, standard errors) happen on the full
M-vector in the caller.  This keeps memory at O(block) while making every
result independent of block size and worker count.

Integrands follow the left-endpoint convention: the coefficient value at node
t_k multiplies the increment over [t_k, t_{k+1}).  Per-node arrays therefore
have N entries (nodes t_0 .. t_{N-1}) while cumulative paths have N+1.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from portsens.estimate import ValueEstimate, mean_estimate

WORKERS_ENV = "PORTSENS_WORKERS"

# binary ensemble dump: 7 little-endian 64-bit header fields, then row-major
# float64 increments of shape (M, N, n)
_DUMP_MAGIC = int.from_bytes(b"BRWNPATH", "little")
_DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<6Qd")  # magic, version, seed, M, N, n, T

_MAX_CELLS = 2**34  # hard cap on M*N*n for any materialization request


class ResourceLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/N on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        """All N+1 nodes including both endpoints."""
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def left_nodes(self) -> np.ndarray:
        """The N nodes t_0 .. t_{N-1} at which integrands are evaluated."""
        return self.nodes[:-1]


@dataclass(frozen=True)
class PathEnsemble:
    """M Brownian paths in R^n on a grid, defined by (seed, scheme).

    Increments are N(0, dt) i.i.d. per coordinate.  ``block_paths`` is a
    memory knob only; it never affects values.
    """

    grid: TimeGrid
    n: int
    count: int
    seed: int
    scheme: str = "philox-per-path/1"
    block_paths: int = field(default=8192, compare=False)
    _stored: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.count < 1:
            raise ValueError("need n >= 1 and count >= 1")
        if self.count * self.grid.steps * self.n > _MAX_CELLS:
            raise ResourceLimitError(
                f"ensemble of {self.count}x{self.grid.steps}x{self.n} cells "
                "exceeds the resource cap")

    def block_ranges(self):
        for start in range(0, self.count, self.block_paths):
            yield start, min(start + self.block_paths, self.count)

    def increments(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Increment array of shape (stop-start, N, n) for a path range."""
        stop = self.count if stop is None else stop
        if not 0 <= start <= stop <= self.count:
            raise IndexError(f"bad path range [{start}, {stop})")
        if self._stored is not None:
            return self._stored[start:stop]
        shape = (self.grid.steps, self.n)
        out = np.empty((stop - start, *shape))
        root = np.uint64(self.seed)
        for i in range(start, stop):
            key = np.array([root, np.uint64(i)], dtype=np.uint64)
            gen = np.random.Generator(np.random.Philox(key=key))
            out[i - start] = gen.standard_normal(shape)
        out *= np.sqrt(self.grid.dt)
        return out

    def with_block_paths(self, block_paths: int) -> "PathEnsemble":
        return replace(self, block_paths=block_paths)


def simulate(grid: TimeGrid, n: int, M: int, seed: int,
             block_paths: int = 8192) -> PathEnsemble:
    """Seeded ensemble of M Brownian paths in R^n on the grid."""
    return PathEnsemble(grid=grid, n=n, count=M, seed=seed,
                        block_paths=block_paths)


def cumulative(dW: np.ndarray) -> np.ndarray:
    """Node values W_{t_0..t_N} (shape (B, N+1, n)) from increments."""
    B, N, n = dW.shape
    W = np.empty((B, N + 1, n))
    W[:, 0] = 0.0
    np.cumsum(dW, axis=1, out=W[:, 1:])
    return W


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, workers)


def map_blocks(ensemble: PathEnsemble, block_fn, workers: int | None = None):
    """Apply block_fn(start, stop, dW, W) over all blocks, in path order.

    block_fn returns one array or a tuple of arrays whose leading axis is the
    block's path count; the results are concatenated along that axis.  Blocks
    may be processed by several threads, but because every path owns its RNG
    stream and reductions happen on the concatenated output, the result is
    bit-identical for any worker count.
    """
    ranges = list(ensemble.block_ranges())

    def run(rng):
        start, stop = rng
        dW = ensemble.increments(start, stop)
        return block_fn(start, stop, dW, cumulative(dW))

    nworkers = resolve_workers(workers)
    if nworkers == 1 or len(ranges) == 1:
        pieces = [run(r) for r in ranges]
    else:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            pieces = list(pool.map(run, ranges))
    if isinstance(pieces[0], tuple):
        return tuple(np.concatenate(cols) for cols in zip(*pieces))
    return np.concatenate(pieces)


@dataclass(frozen=True, eq=False)
class PathFunctional:
    """Per-path scalar values of one terminal functional."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError(f"non-finite path functional {self.label!r}")

    def mean_estimate(self, seed: int) -> ValueEstimate:
        return mean_estimate(self.values, seed, self.label or "path-functional")


# ---------------------------------------------------------------------------
# block-level kernels; H may be deterministic (N, n) or adapted (B, N, n)

def ito_sum(H: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """Per-path sum_k <H_k, dW_k> with left-endpoint H."""
    return np.einsum("...kj,bkj->b", H, dW) if H.ndim == 2 \
        else np.einsum("bkj,bkj->b", H, dW)


def quad_sum(H: np.ndarray, G: np.ndarray, dt: float) -> np.ndarray:
    """Per-path sum_k <H_k, G_k> dt (zero-dimensional if both deterministic)."""
    prod = np.einsum("...kj,...kj->...", H, G)
    return prod * dt


def log_doleans(gamma: np.ndarray, dW: np.ndarray, dt: float) -> np.ndarray:
    """Per-path log of the stochastic exponential of int gamma dW."""
    return ito_sum(gamma, dW) - 0.5 * quad_sum(gamma, gamma, dt)


def _as_values(integrand, grid: TimeGrid, W: np.ndarray) -> np.ndarray:
    """Per-node values from an array, a coefficient-like object or a callable."""
    if callable(integrand):
        vals = integrand(grid, W)
    elif hasattr(integrand, "evaluate"):
        vals = integrand.evaluate(grid, W)
    else:
        vals = np.asarray(integrand, dtype=float)
    if vals.ndim not in (2, 3):
        raise ValueError("integrand must evaluate to (N, n) or (B, N, n)")
    if vals.shape[-2] != grid.steps or vals.shape[-1] != W.shape[-1]:
        raise ValueError(f"integrand shape {vals.shape} does not match "
                         f"N={grid.steps}, n={W.shape[-1]}")
    return vals


# ---------------------------------------------------------------------------
# public path functionals

def ito_integral(integrand, ensemble: PathEnsemble,
                 workers: int | None = None) -> PathFunctional:
    """Terminal Ito integral sum_k <H_{t_k}, dW_k> per path.

    ``integrand`` is a deterministic (N, n) array, a coefficient process, or
    a callable (grid, W_block) -> (B, N, n) using left-endpoint information
    only.
    """
    def block(start, stop, dW, W):
        return ito_sum(_as_values(integrand, ensemble.grid, W), dW)

    return PathFunctional(map_blocks(ensemble, block, workers), "ito-integral")


def stochastic_exponential(gamma, ensemble: PathEnsemble,
                           workers: int | None = None) -> PathFunctional:
    """Terminal Doleans-Dade exponential exp(int gamma dW - 1/2 int |gamma|^2 dt).

    Computed in log space, so the result is strictly positive by
    construction.
    """
    dt = ensemble.grid.dt

    def block(start, stop, dW, W):
        g = _as_values(gamma, ensemble.grid, W)
        out = log_doleans(g, dW, dt)
        return np.exp(out, out=out)

    return PathFunctional(map_blocks(ensemble, block, workers), "stoch-exp")


def girsanov_weight(lambda_new, lambda_base, ensemble: PathEnsemble,
                    workers: int | None = None) -> PathFunctional:
    """Density dP^new/dP per path: E(int (lambda_new - lambda_base) dW)_T."""
    dt = ensemble.grid.dt

    def block(start, stop, dW, W):
        delta = (_as_values(lambda_new, ensemble.grid, W)
                 - _as_values(lambda_base, ensemble.grid, W))
        out = log_doleans(delta, dW, dt)
        return np.exp(out, out=out)

    return PathFunctional(map_blocks(ensemble, block, workers), "girsanov-weight")


def shifted_brownian(ensemble: PathEnsemble, drift,
                     workers: int | None = None) -> np.ndarray:
    """Cumulative paths of W_t - int_0^t drift ds, shape (M, N+1, n).

    Materializes the whole ensemble; for large M*N stream blocks instead and
    apply ``shift_increments`` inside the block function.
    """
    grid = ensemble.grid
    if ensemble.count * (grid.steps + 1) * ensemble.n > 2**27:
        raise ResourceLimitError("shifted ensemble too large to materialize; "
                                 "stream blocks with shift_increments instead")

    def block(start, stop, dW, W):
        vals = _as_values(drift, grid, W)
        return cumulative(shift_increments(dW, vals, grid.dt))

    return map_blocks(ensemble, block, workers)


def shift_increments(dW: np.ndarray, drift_vals: np.ndarray, dt: float) -> np.ndarray:
    """Increments of the drift-removed path: dW_k - drift_k dt."""
    return dW - drift_vals * dt


# ---------------------------------------------------------------------------
# binary ensemble dump

def dump_ensemble(ensemble: PathEnsemble, path: str,
                  workers: int | None = None) -> None:
    """Write header + row-major float64 increments to ``path``."""
    grid = ensemble.grid
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, _DUMP_VERSION,
                                   ensemble.seed, ensemble.count,
                                   grid.steps, ensemble.n, grid.horizon))
        for start, stop in ensemble.block_ranges():
            fh.write(np.ascontiguousarray(
                ensemble.increments(start, stop)).tobytes())


def load_ensemble(path: str, block_paths: int = 8192) -> PathEnsemble:
    """Read an ensemble dump; the result serves stored increments."""
    with open(path, "rb") as fh:
        header = fh.read(_DUMP_HEADER.size)
        if len(header) < _DUMP_HEADER.size:
            raise ValueError("truncated ensemble file")
        magic, version, seed, M, N, n, T = _DUMP_HEADER.unpack(header)
        if magic != _DUMP_MAGIC:
            raise ValueError("not an ensemble dump (bad magic)")
        if version != _DUMP_VERSION:
            raise ValueError(f"unsupported ensemble dump version {version}")
        if M * N * n > _MAX_CELLS:
            raise ResourceLimitError("stored ensemble exceeds the resource cap")
        payload = fh.read(8 * M * N * n)
    if len(payload) != 8 * M * N * n:
        raise ValueError("truncated ensemble payload")
    data = np.frombuffer(payload, dtype="<f8")
    grid = TimeGrid(horizon=T, steps=N)
    return PathEnsemble(grid=grid, n=n, count=M, seed=seed,
                        scheme="stored/1", block_paths=block_paths,
                        _stored=data.reshape(M, N, n))
