"""Cone-projection quadratic programming via active-set nonnegative least squares.

The one QP family this package needs: for a probe ``t`` and signed generator
rows ``G`` (K x N), find

    x* = argmin  0.5 ||x||^2 - t.x   subject to  G x <= 0,

whose Moreau complement ``t - x*`` is the Euclidean projection of ``t`` onto
``cone(rows of G)``.  The dual is a nonnegative least-squares problem in the
K generator weights,

    lam* = argmin_{lam >= 0} ||t - G.T lam||^2,      x* = t - G.T lam*,

which we solve with a Lawson-Hanson style active-set iteration.  The dual
weights are exactly the per-point anchor masses the geometry estimators
consume, and K = sum of manifold sizes stays small while N may be large.

Also here: a strict linear-separability oracle built on Gordan's alternative
(either a strict separator exists, or the origin is a convex combination of
the rows — never both), used by the simulated-capacity estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "ConeProjectionProblem",
    "ConeProjectionSolution",
    "SeparabilityResult",
    "NumericalError",
    "project_to_polar_cone",
    "nnls",
    "strictly_separable",
]

# Refactor the passive-set Cholesky from scratch after this many incremental
# updates; bounds error growth from repeated rank-1 appends.
_REFACTOR_EVERY = 50


class NumericalError(RuntimeError):
    """Solver failed to reach its tolerance within the iteration budget."""


@dataclass(frozen=True)
class ConeProjectionProblem:
    """Probe vector plus the dichotomy-signed points of all manifolds.

    ``signed_points`` row (i, j) is y_i * s_{i,j}; ``row_owner`` maps each row
    back to its manifold index.
    """

    probe: np.ndarray
    signed_points: np.ndarray
    row_owner: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.probe, dtype=np.float64).ravel()
        G = np.ascontiguousarray(self.signed_points, dtype=np.float64)
        owner = np.ascontiguousarray(self.row_owner, dtype=np.intp).ravel()
        if G.ndim != 2 or G.shape[1] != t.shape[0]:
            raise ValueError(f"signed_points {G.shape} incompatible with probe {t.shape}")
        if owner.shape[0] != G.shape[0]:
            raise ValueError("row_owner length must equal number of rows")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite entries in problem data")
        object.__setattr__(self, "probe", t)
        object.__setattr__(self, "signed_points", G)
        object.__setattr__(self, "row_owner", owner)


@dataclass(frozen=True)
class ConeProjectionSolution:
    """QP minimizer with its dual certificate.

    Satisfies, up to solver tolerance: x_star = probe - G.T dual,
    <x_star, cone_proj> = 0, and ||t||^2 = ||x_star||^2 + ||cone_proj||^2.
    """

    x_star: np.ndarray
    dual: np.ndarray
    cone_proj: np.ndarray
    active_set: np.ndarray
    iterations: int


@dataclass(frozen=True)
class SeparabilityResult:
    """Outcome of the strict-separability oracle with its Gordan certificate."""

    separable: bool
    witness: np.ndarray | None       # theta with G @ theta > 0, when separable
    hull_coeffs: np.ndarray | None   # mu >= 0, sum 1, ||G.T mu|| ~ 0, otherwise

    def __bool__(self) -> bool:
        return self.separable


class _PassiveGram:
    """Gram matrix and Cholesky factor of the passive-set rows of A.

    Columns are appended incrementally; the factor is rebuilt from scratch
    every _REFACTOR_EVERY appends and after any removal.  If the Gram goes
    numerically indefinite (duplicated rows), solves fall back to a dense
    least-squares on the design matrix itself.
    """

    def __init__(self, A: np.ndarray):
        self._A = A
        self.passive: list[int] = []
        cap = 8
        self._gram = np.zeros((cap, cap))
        self._L = np.zeros((cap, cap))
        self._since_refactor = 0
        self._lstsq_mode = False

    def _grow(self, need: int):
        cap = self._gram.shape[0]
        if need <= cap:
            return
        new_cap = max(2 * cap, need)
        g = np.zeros((new_cap, new_cap))
        g[: cap, : cap] = self._gram
        self._gram = g
        l = np.zeros((new_cap, new_cap))
        l[: cap, : cap] = self._L
        self._L = l

    def add(self, j: int):
        p = len(self.passive)
        self._grow(p + 1)
        a_j = self._A[j]
        if p:
            col = self._A[self.passive] @ a_j
            self._gram[:p, p] = col
            self._gram[p, :p] = col
        self._gram[p, p] = a_j @ a_j
        self.passive.append(j)
        self._since_refactor += 1
        if self._lstsq_mode:
            return
        if self._since_refactor >= _REFACTOR_EVERY:
            self._refactor()
            return
        # incremental append: L_new row = [l, sqrt(g_jj - |l|^2)]
        g = self._gram[: p + 1, : p + 1]
        if p:
            ell = solve_triangular(self._L[:p, :p], g[:p, p], lower=True)
        else:
            ell = np.zeros(0)
        d2 = g[p, p] - ell @ ell
        if d2 <= 1e-13 * max(g[p, p], 1e-300):
            self._refactor()
            return
        self._L[p, :p] = ell
        self._L[p, p] = np.sqrt(d2)

    def remove(self, indices: set):
        self.passive = [i for i in self.passive if i not in indices]
        p = len(self.passive)
        if p:
            block = self._A[self.passive] @ self._A[self.passive].T
            self._grow(p)
            self._gram[:p, :p] = block
        self._refactor()

    def _refactor(self):
        self._since_refactor = 0
        p = len(self.passive)
        if p == 0:
            self._lstsq_mode = False
            return
        try:
            self._L[:p, :p] = np.linalg.cholesky(self._gram[:p, :p])
            self._lstsq_mode = False
        except np.linalg.LinAlgError:
            self._lstsq_mode = True

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Least-squares coefficients of b on the passive rows of A."""
        p = len(self.passive)
        if p == 0:
            return np.zeros(0)
        if self._lstsq_mode:
            z, *_ = np.linalg.lstsq(self._A[self.passive].T, b, rcond=None)
            return z
        rhs = self._A[self.passive] @ b
        y = solve_triangular(self._L[:p, :p], rhs, lower=True)
        return solve_triangular(self._L[:p, :p].T, y, lower=False)


@dataclass
class _LHResult:
    lam: np.ndarray
    resid: np.ndarray
    status: str          # 'converged' | 'early'
    pivots: int


def _lawson_hanson(A, b, tol, max_iter=None, early_stop=None) -> _LHResult:
    """Minimize ||b - A.T lam||^2 over lam >= 0 (A is K x N).

    Pivot selection is by the residual's cosine against each row, so the
    iteration path is invariant to positive row rescaling; ties break toward
    the lowest row index.  ``early_stop(w, resid)`` may abort the iteration
    (used by the separability oracle once a certificate appears).
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    K = A.shape[0]
    if max_iter is None:
        max_iter = 50 * K
    row_norms = np.linalg.norm(A, axis=1)
    sel_scale = np.where(row_norms > 0, row_norms, np.inf)
    w_tol = tol * max(np.linalg.norm(b), np.finfo(float).tiny)

    lam = np.zeros(K)
    in_passive = np.zeros(K, dtype=bool)
    resid = b.copy()
    state = _PassiveGram(A)
    steps = 0

    while True:
        w = A @ resid
        if early_stop is not None and early_stop(w, resid):
            return _LHResult(lam, resid, "early", steps)
        wsel = w / sel_scale
        wsel[in_passive] = -np.inf
        j = int(np.argmax(wsel))
        if not np.isfinite(wsel[j]) or wsel[j] <= w_tol:
            return _LHResult(lam, resid, "converged", steps)

        state.add(j)
        in_passive[j] = True
        steps += 1
        if steps > max_iter:
            raise NumericalError(
                f"active-set iteration cap {max_iter} exceeded; "
                f"residual norm {np.linalg.norm(resid):.3e}, "
                f"max KKT violation {float(wsel[j]):.3e}"
            )

        # restore feasibility of the passive least-squares solution
        while True:
            z = state.solve(b)
            if z.size and np.min(z) > 0:
                break
            passive = state.passive
            lam_p = lam[passive]
            neg = z <= 0
            denom = lam_p - z
            with np.errstate(divide="ignore", invalid="ignore"):
                alphas = np.where(neg & (denom > 0), lam_p / denom, np.inf)
            alpha = float(np.min(alphas)) if alphas.size else 0.0
            if not np.isfinite(alpha):
                alpha = 0.0
            lam_new = lam_p + alpha * (z - lam_p)
            scale = max(float(np.max(np.abs(lam_new))), 1.0)
            drop = {
                p
                for p, was_neg, val in zip(passive, neg, lam_new)
                if was_neg and val <= 1e-12 * scale
            }
            if not drop:
                # guarantee progress: drop the alpha-achieving index
                drop = {passive[int(np.argmin(alphas))]}
            lam[passive] = lam_new
            for p in drop:
                lam[p] = 0.0
                in_passive[p] = False
            state.remove(drop)
            steps += 1
            if steps > max_iter:
                raise NumericalError(
                    f"inner feasibility loop exceeded cap {max_iter}; "
                    f"residual norm {np.linalg.norm(resid):.3e}"
                )
            if not state.passive:
                z = np.zeros(0)
                break

        lam[:] = 0.0
        if state.passive:
            lam[state.passive] = z
        resid = b - A.T @ lam


def nnls(A, b, tol: float = 1e-8):
    """Nonnegative weights lam minimizing ||b - A.T lam||_2 (A is K x N).

    Returns the length-K dual vector; KKT conditions hold within ``tol``
    relative to ||b||.  This is the dual solver behind
    :func:`project_to_polar_cone`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    res = _lawson_hanson(A, b, tol=tol)
    return res.lam


def project_to_polar_cone(problem: ConeProjectionProblem, tol: float = 1e-8) -> ConeProjectionSolution:
    """Project the probe onto the polar of cone(signed rows).

    Returns the unique minimizer of 0.5||x||^2 - t.x subject to Gx <= 0; by
    Moreau decomposition ``cone_proj = t - x_star`` is the projection of t
    onto the cone spanned by the rows of G.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    G = problem.signed_points
    t = problem.probe
    norms = np.linalg.norm(G, axis=1)
    if np.any(norms == 0):
        bad = np.flatnonzero(norms == 0)
        raise ValueError(f"all-zero generator rows at indices {bad.tolist()}")
    res = _lawson_hanson(G, t, tol=tol)
    cone_proj = G.T @ res.lam
    x_star = t - cone_proj
    active = np.flatnonzero(res.lam > 0)
    return ConeProjectionSolution(
        x_star=x_star,
        dual=res.lam,
        cone_proj=cone_proj,
        active_set=active,
        iterations=res.pivots,
    )


def strictly_separable(signed_points, tol: float | None = None) -> SeparabilityResult:
    """Decide whether some theta has (signed_points) @ theta > 0 componentwise.

    By Gordan's alternative this holds iff the origin is not a convex
    combination of the rows.  We locate the nearest-to-origin hull point by
    solving an augmented NNLS; its residual either certifies a strict
    separator or yields convex coefficients mu with ||G.T mu|| below
    tolerance.  Boundary cases resolve to "not separable" so that either
    answer carries an auditable certificate.

    ``tol`` is the non-separability threshold on ||G.T mu|| relative to the
    largest row norm (default 1e-10).
    """
    G = np.asarray(signed_points, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] < 1:
        raise ValueError("signed_points must be a non-empty 2-D array")
    K, N = G.shape
    if tol is None:
        tol = 1e-10
    norms = np.linalg.norm(G, axis=1)
    max_norm = float(np.max(norms))
    if max_norm == 0.0:
        mu = np.zeros(K)
        mu[0] = 1.0
        return SeparabilityResult(False, None, mu)
    if np.any(norms == 0):
        # a zero row forces <theta, 0> = 0, never strictly positive
        mu = np.zeros(K)
        mu[int(np.argmin(norms))] = 1.0
        return SeparabilityResult(False, None, mu)

    # normalized rows augmented with a 1-coordinate; target picks out the
    # simplex constraint: residual zero <=> 0 in conv(rows)
    Gn = G / norms[:, None]
    A = np.concatenate([Gn, np.ones((K, 1))], axis=1)
    target = np.zeros(N + 1)
    target[N] = 1.0

    def _separator_visible(w, resid):
        return resid[N] - np.max(w) > 0

    res = _lawson_hanson(A, target, tol=1e-12, early_stop=_separator_visible)

    theta = -res.resid[:N]
    margins = Gn @ theta
    if np.min(margins) > 0:
        return SeparabilityResult(True, theta, None)

    lam = res.lam
    total = lam.sum()
    if total <= 0:
        # no mass found but no separator either; declare boundary non-separable
        mu = np.full(K, 1.0 / K)
    else:
        mu = lam / total
    # certificate back in the original row scaling
    nu = mu / norms
    nu /= nu.sum()
    gap = np.linalg.norm(G.T @ nu)
    if gap <= tol * max_norm:
        return SeparabilityResult(False, None, nu)
    # hull point is bounded away from zero yet no strict margin surfaced:
    # treat as boundary, keep the best certificate available
    return SeparabilityResult(False, None, nu)
