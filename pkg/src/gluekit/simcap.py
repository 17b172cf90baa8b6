"""Simulated manifold capacity: random projection + separability bisection.

For a projection dimension n, p_n is the probability that a random dichotomy
of the manifolds remains strictly linearly separable after a random Gaussian
projection to R^n.  The capacity is P / n* where n* is the smallest dimension
with p_n >= 1/2; a sum-form variant integrates the whole probability curve
instead of locating the crossing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coneqp import strictly_separable
from .model import ManifoldEnsemble, RngStream, sample_dichotomy
from .parallel import indexed_map

__all__ = [
    "ProbCurve",
    "SimCapacityReport",
    "UnseparableError",
    "est_prob",
    "find_critical_dim",
    "simulated_capacity",
]

# stream-id offsets so bisection levels, the ambient pre-check, and the
# sum-form grid never reuse a trial substream
_AMBIENT_STREAM = 0
_LEVEL_STREAM_BASE = 1
_GRID_STREAM_BASE = 10_000


class UnseparableError(RuntimeError):
    """The ensemble is not separable at the ambient dimension."""


@dataclass(frozen=True)
class ProbCurve:
    """Estimated separability probabilities, sorted by projection dimension."""

    entries: tuple  # of (n, p_hat, trials)

    def __post_init__(self):
        ent = tuple(sorted((int(n), float(p), int(m)) for n, p, m in self.entries))
        for n, p, m in ent:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"p_hat {p} out of [0, 1] at n={n}")
        object.__setattr__(self, "entries", ent)

    def dims(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries])

    def probs(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])


@dataclass(frozen=True)
class SimCapacityReport:
    alpha_sim: float
    critical_dim: int
    curve: ProbCurve
    method: str  # 'binary_search' | 'sum_form'


class _TrialWorker:
    def __init__(self, ensemble, n, rng):
        X, owner = ensemble.stacked_points()
        self.X = X
        self.owner = owner
        self.P = ensemble.n_manifolds
        self.N = ensemble.ambient_dim
        self.n = n
        self.rng = rng

    def __call__(self, j: int) -> bool:
        sub = self.rng.substream(j)
        g = sub.substream(0).generator()
        proj = g.standard_normal((self.n, self.N)) / np.sqrt(self.n)
        y = sample_dichotomy(self.P, sub.substream(1)).signs
        signed = (self.X @ proj.T) * y[self.owner][:, None]
        return strictly_separable(signed).separable


def est_prob(ensemble: ManifoldEnsemble, n: int, m: int, rng: RngStream, workers: int = 1) -> float:
    """Fraction of m trials where a fresh (projection, dichotomy) pair stays separable."""
    if not (1 <= n <= ensemble.ambient_dim):
        raise ValueError(f"projection dim {n} not in [1, {ensemble.ambient_dim}]")
    if m < 1:
        raise ValueError("m must be >= 1")
    worker = _TrialWorker(ensemble, n, rng)
    flags = indexed_map(worker, range(m), workers)
    return float(np.count_nonzero(flags)) / m


def _bisect(ensemble, m, rng, est_prob_fn, workers):
    """Smallest n with p_hat_n >= 0.5; returns (n_star, curve entries)."""
    N = ensemble.ambient_dim
    entries = []
    p_top = est_prob_fn(ensemble, N, m, rng.substream(_AMBIENT_STREAM), workers)
    entries.append((N, p_top, m))
    if p_top < 0.5:
        raise UnseparableError(
            f"unseparable at ambient dimension: p_hat({N}) = {p_top:.3f} < 0.5"
        )
    lo, hi = 0, N  # lo is a sentinel 'fails'; hi always satisfies p_hat >= 0.5
    level = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        p = est_prob_fn(ensemble, mid, m, rng.substream(_LEVEL_STREAM_BASE + level), workers)
        entries.append((mid, p, m))
        level += 1
        if p >= 0.5:
            hi = mid
        else:
            lo = mid
    return hi, entries


def find_critical_dim(ensemble: ManifoldEnsemble, m: int, rng: RngStream, est_prob_fn=None, workers: int = 1) -> int:
    """Bisection for the smallest projection dimension with p_hat >= 0.5.

    ``est_prob_fn`` is an injection seam for tests (same signature as
    :func:`est_prob`).  Raises UnseparableError when even the ambient
    dimension fails the threshold.
    """
    fn = est_prob_fn if est_prob_fn is not None else est_prob
    n_star, _ = _bisect(ensemble, m, rng, fn, workers)
    return n_star


def simulated_capacity(
    ensemble: ManifoldEnsemble,
    m: int = 1000,
    rng: RngStream = RngStream(0),
    method: str = "binary_search",
    workers: int = 1,
    grid_size: int = 24,
) -> SimCapacityReport:
    """Simulated capacity P / n* (binary_search) or the curve-sum variant.

    sum_form evaluates p_hat on a geometric grid of dimensions merged with
    the bisection path, interpolates linearly in log n across every integer
    dimension, and returns P / sum_n (1 - p_n).
    """
    if method not in ("binary_search", "sum_form"):
        raise ValueError(f"unknown method {method!r}")
    P, N = ensemble.n_manifolds, ensemble.ambient_dim
    n_star, entries = _bisect(ensemble, m, rng, est_prob, workers)
    if method == "binary_search":
        return SimCapacityReport(P / n_star, n_star, ProbCurve(tuple(entries)), method)

    have = {n for n, _, _ in entries}
    grid = np.unique(np.round(np.geomspace(1, N, grid_size)).astype(int))
    todo = sorted(set(grid.tolist()) - have)
    for idx, n in enumerate(todo):
        p = est_prob(ensemble, n, m, rng.substream(_GRID_STREAM_BASE + idx), workers)
        entries.append((n, p, m))
    curve = ProbCurve(tuple(entries))
    dims, probs = curve.dims(), curve.probs()
    # monotone completion: interpolate p linearly in log n over all integers
    all_n = np.arange(1, N + 1)
    p_all = np.interp(np.log(all_n), np.log(dims), probs)
    denom = float(np.sum(1.0 - p_all))
    if denom <= 0:
        raise UnseparableError("probability curve saturates at 1 everywhere; capacity unbounded")
    return SimCapacityReport(P / denom, n_star, curve, method)
