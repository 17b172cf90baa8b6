"""Mean-field manifold capacity and effective geometric measures.

Each Monte-Carlo draw pairs a random dichotomy with a Gaussian probe, solves
the cone-projection QP over all signed points, and condenses the dual weights
into one anchor point per manifold.  Anchor statistics across draws yield the
capacity and the five effective measures (dimension, radius, center/axis/
center-axis alignments).

Sign conventions: AnchorDraw stores the dichotomy-signed anchors (the
dual-weighted averages of the signed points, exactly what the QP produces).
Capacity is sign-blind, but the geometric measures are not, so two frames are
used deliberately.  Centers are means of the un-flipped anchors y_i * s~_i:
averaging signed anchors over random dichotomies would cancel every center to
zero by symmetry.  Axis parts (anchor fluctuations about the centers) are
compared across manifolds in the signed frame, where every anchor chases the
same probe direction: in the unsigned frame the fluctuation of manifold i
flips with y_i, so cross-manifold axis cosines would cancel in expectation no
matter how correlated the underlying subspaces are.  Dimension, radius, and
capacity are quadratic forms, provably identical in either frame.

Dichotomy signs are keyed by manifold label (one substream per label), so
reordering the manifolds of an ensemble permutes intermediates without
changing any reported scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coneqp import ConeProjectionProblem, project_to_polar_cone
from .model import Dichotomy, ManifoldEnsemble, RngStream
from .parallel import indexed_map

__all__ = [
    "AnchorDraw",
    "GlueReport",
    "DegenerateDrawsError",
    "sample_anchor_draw",
    "collect_anchor_draws",
    "estimate_capacity",
    "estimate_geometry",
    "geometry_from_draws",
    "capacity_from_geometry",
]

# relative SVD cutoff for the anchor gram pseudo-inverses; anchor grams are
# routinely rank-deficient because inactive manifolds contribute zero rows
_PINV_RCOND = 1e-10

# axis norms below this (relative to anchor scale) flag a point-manifold
# degeneracy where dimension and radius are identically zero
_POINT_TOL = 1e-12


class DegenerateDrawsError(RuntimeError):
    """No draw produced an active manifold; capacity is undefined."""


@dataclass(frozen=True)
class AnchorDraw:
    """One (dichotomy, probe) sample with its anchors and dual masses.

    ``anchors`` row i is the signed anchor: the dual-weighted average of
    manifold i's dichotomy-signed points; rows with zero ``dual_mass`` are
    inactive and identically zero.
    """

    dichotomy: Dichotomy
    probe: np.ndarray
    anchors: np.ndarray
    dual_mass: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return self.dual_mass > 0

    def unsigned_anchors(self) -> np.ndarray:
        """Anchors mapped back into their own manifolds (y_i * signed anchor)."""
        return self.anchors * self.dichotomy.signs[:, None]


def signed_problem(ensemble: ManifoldEnsemble, dichotomy: Dichotomy, probe: np.ndarray) -> ConeProjectionProblem:
    X, owner = ensemble.stacked_points()
    signed = X * dichotomy.signs[owner][:, None]
    return ConeProjectionProblem(probe, signed, owner)


def _label_keyed_dichotomy(ensemble: ManifoldEnsemble, rng: RngStream) -> Dichotomy:
    # one substream per manifold label: manifold order never changes its sign
    signs = np.empty(ensemble.n_manifolds)
    for i, m in enumerate(ensemble.manifolds):
        g = rng.substream(1 + m.label_id).generator()
        signs[i] = -1.0 if g.random() < 0.5 else 1.0
    return Dichotomy(signs)


def sample_anchor_draw(
    ensemble: ManifoldEnsemble,
    rng: RngStream,
    probe: np.ndarray | None = None,
    dichotomy: Dichotomy | None = None,
    qp_tol: float = 1e-8,
) -> AnchorDraw:
    """Draw (y, t), solve the cone QP, and condense duals into anchors.

    ``probe`` and ``dichotomy`` may be supplied explicitly (validation seams:
    e.g. rotate an ensemble together with its probes).
    """
    P, N = ensemble.n_manifolds, ensemble.ambient_dim
    if probe is None:
        probe = rng.substream(0).generator().standard_normal(N)
    else:
        probe = np.asarray(probe, dtype=np.float64).ravel()
    if dichotomy is None:
        dichotomy = _label_keyed_dichotomy(ensemble, rng)

    problem = signed_problem(ensemble, dichotomy, probe)
    sol = project_to_polar_cone(problem, tol=qp_tol)

    anchors = np.zeros((P, N))
    mass = np.zeros(P)
    for i in range(P):
        rows = problem.row_owner == i
        lam_i = sol.dual[rows]
        m = lam_i.sum()
        mass[i] = m
        if m > 0:
            anchors[i] = lam_i @ problem.signed_points[rows] / m
    return AnchorDraw(dichotomy, probe, anchors, mass)


def collect_anchor_draws(ensemble: ManifoldEnsemble, n_draws: int, rng: RngStream, workers: int = 1):
    """n_draws independent anchor draws; draw k uses rng.substream(k)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")

    def _one(k: int) -> AnchorDraw:
        return sample_anchor_draw(ensemble, rng.substream(k))

    if workers <= 1:
        return [_one(k) for k in range(n_draws)]
    return indexed_map(_DrawWorker(ensemble, rng), range(n_draws), workers)


class _DrawWorker:
    """Picklable per-index draw closure for process pools."""

    def __init__(self, ensemble, rng):
        self.ensemble = ensemble
        self.rng = rng

    def __call__(self, k: int) -> AnchorDraw:
        return sample_anchor_draw(self.ensemble, self.rng.substream(k))


def _pinv(mat: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(mat, rcond=_PINV_RCOND, hermitian=True)


def _capacity_terms(draws, P: int) -> np.ndarray:
    """Per-draw ||proj_cone t||^2 / P evaluated through the anchor gram."""
    vals = np.empty(len(draws))
    for k, d in enumerate(draws):
        S = d.anchors
        v = S @ d.probe
        vals[k] = v @ _pinv(S @ S.T) @ v / P
    return vals


def _capacity_from_terms(terms: np.ndarray) -> tuple[float, float]:
    mean = float(terms.mean())
    if mean <= 0:
        raise DegenerateDrawsError("no active manifold in any draw; capacity undefined")
    alpha = 1.0 / mean
    if len(terms) > 1:
        se_mean = float(terms.std(ddof=1)) / np.sqrt(len(terms))
        se = se_mean / mean**2
    else:
        se = float("nan")
    return alpha, se


def estimate_capacity(ensemble: ManifoldEnsemble, n_draws: int, rng: RngStream, workers: int = 1):
    """Mean-field capacity alpha_M with its Monte-Carlo standard error."""
    draws = collect_anchor_draws(ensemble, n_draws, rng, workers)
    return _capacity_from_terms(_capacity_terms(draws, ensemble.n_manifolds))


@dataclass(frozen=True)
class GlueReport:
    """Capacity plus the five effective geometric measures with error bars."""

    capacity: float
    dimension: float
    radius: float
    center_align: float
    axis_align: float
    center_axis_align: float
    n_draws: int
    std_err: dict
    point_degenerate: bool = False


def geometry_from_draws(draws, P: int, absolute_alignments: bool = False) -> GlueReport:
    """Reduce anchor draws to a GlueReport (deterministic, order-fixed).

    Centers are the across-draw means of the un-flipped anchors (inactive
    draws contribute zero rows, as they do to the capacity gram).  An
    inactive manifold is skipped in that draw's alignment averages.
    """
    n = len(draws)
    if n < 2:
        raise ValueError("geometry needs n_draws >= 2")

    cap_terms = _capacity_terms(draws, P)
    alpha, alpha_se = _capacity_from_terms(cap_terms)

    unsigned = np.stack([d.unsigned_anchors() for d in draws])   # (n, P, N)
    active = np.stack([d.active for d in draws])                 # (n, P)
    signs = np.stack([d.dichotomy.signs for d in draws])         # (n, P)
    centers = unsigned.mean(axis=0)                              # (P, N)
    # fluctuations about the centers, flipped into the signed frame
    axis_parts = (unsigned - centers[None, :, :]) * signs[:, :, None]

    anchor_scale = float(np.max(np.linalg.norm(unsigned, axis=2), initial=0.0))
    axis_norms = np.linalg.norm(axis_parts, axis=2)              # (n, P)
    point_degenerate = bool(np.max(axis_norms, initial=0.0) <= _POINT_TOL * max(anchor_scale, 1.0))

    center_gram = centers @ centers.T
    center_gram_pinv = _pinv(center_gram)

    dim_terms = np.empty(n)
    rad_terms = np.full(n, np.nan)
    axis_cos = np.zeros((P, P))
    axis_cnt = np.zeros((P, P))
    caxis_cos = np.zeros((P, P))
    caxis_cnt = np.zeros((P, P))
    center_norms = np.linalg.norm(centers, axis=1)

    for k, d in enumerate(draws):
        S1 = axis_parts[k]
        t1 = S1 @ d.probe                                        # (P,)
        G1 = S1 @ S1.T
        dim_terms[k] = t1 @ _pinv(G1) @ t1 / P

        num = t1 @ _pinv(G1 + center_gram) @ t1
        den = t1 @ _pinv(G1 + G1 @ center_gram_pinv @ G1) @ t1
        if den > 0:
            rad_terms[k] = num / den

        act = active[k]
        norms = axis_norms[k]
        for i in range(P):
            if not act[i]:
                continue
            for j in range(P):
                if i == j or not act[j]:
                    continue
                if norms[i] > 0 and norms[j] > 0:
                    c = S1[i] @ S1[j] / (norms[i] * norms[j])
                    axis_cos[i, j] += abs(c) if absolute_alignments else c
                    axis_cnt[i, j] += 1
                if center_norms[i] > 0 and norms[j] > 0:
                    c = centers[i] @ S1[j] / (center_norms[i] * norms[j])
                    caxis_cos[i, j] += abs(c) if absolute_alignments else c
                    caxis_cnt[i, j] += 1

    if point_degenerate:
        dimension, radius = 0.0, 0.0
        dim_se = rad_se = 0.0
    else:
        dimension = float(dim_terms.mean())
        dim_se = float(dim_terms.std(ddof=1)) / np.sqrt(n)
        valid = np.isfinite(rad_terms)
        if valid.any():
            mean_r = float(rad_terms[valid].mean())
            radius = float(np.sqrt(max(mean_r, 0.0)))
            nv = int(valid.sum())
            se_mean = float(rad_terms[valid].std(ddof=1)) / np.sqrt(nv) if nv > 1 else float("nan")
            rad_se = se_mean / (2 * radius) if radius > 0 else float("nan")
        else:
            radius, rad_se = 0.0, float("nan")

    def _pair_mean(acc, cnt):
        mask = cnt > 0
        if not mask.any():
            return float("nan")
        vals = acc[mask] / cnt[mask]
        return float(vals.sum() / (P * (P - 1))) if P > 1 else float("nan")

    axis_align = _pair_mean(axis_cos, axis_cnt)
    center_axis_align = _pair_mean(caxis_cos, caxis_cnt)

    # center alignment: all pairs with nonzero centers; jackknife over draws
    if P > 1:
        cc = np.zeros((P, P))
        nz = center_norms > 0
        pairs = 0.0
        for i in range(P):
            for j in range(P):
                if i != j and nz[i] and nz[j]:
                    c = center_gram[i, j] / (center_norms[i] * center_norms[j])
                    pairs += abs(c) if absolute_alignments else c
        center_align = float(pairs / (P * (P - 1)))
        center_se = _center_jackknife(unsigned, centers, n, P, absolute_alignments)
    else:
        center_align = float("nan")
        center_se = float("nan")

    # per-draw alignment series for crude standard errors
    axis_se = _alignment_se(axis_cos, axis_cnt, draws, axis_parts, axis_norms, active, P, absolute_alignments, "axis", centers, center_norms)
    caxis_se = _alignment_se(caxis_cos, caxis_cnt, draws, axis_parts, axis_norms, active, P, absolute_alignments, "center_axis", centers, center_norms)

    return GlueReport(
        capacity=alpha,
        dimension=dimension,
        radius=radius,
        center_align=center_align,
        axis_align=axis_align,
        center_axis_align=center_axis_align,
        n_draws=n,
        std_err={
            "capacity": alpha_se,
            "dimension": dim_se,
            "radius": rad_se,
            "center_align": center_se,
            "axis_align": axis_se,
            "center_axis_align": caxis_se,
        },
        point_degenerate=point_degenerate,
    )


def _alignment_se(acc, cnt, draws, axis_parts, axis_norms, active, P, absolute, kind, centers, center_norms) -> float:
    if P < 2:
        return float("nan")
    per_draw = []
    for k in range(len(draws)):
        S1 = axis_parts[k]
        norms = axis_norms[k]
        act = active[k]
        vals = []
        for i in range(P):
            if not act[i]:
                continue
            for j in range(P):
                if i == j or not act[j]:
                    continue
                if kind == "axis":
                    if norms[i] > 0 and norms[j] > 0:
                        c = S1[i] @ S1[j] / (norms[i] * norms[j])
                        vals.append(abs(c) if absolute else c)
                else:
                    if center_norms[i] > 0 and norms[j] > 0:
                        c = centers[i] @ S1[j] / (center_norms[i] * norms[j])
                        vals.append(abs(c) if absolute else c)
        if vals:
            per_draw.append(np.mean(vals))
    if len(per_draw) < 2:
        return float("nan")
    arr = np.asarray(per_draw)
    return float(arr.std(ddof=1) / np.sqrt(len(arr)))


def _center_jackknife(unsigned, centers, n, P, absolute) -> float:
    if n < 3:
        return float("nan")
    total = centers * n
    vals = np.empty(n)
    for k in range(n):
        cents = (total - unsigned[k]) / (n - 1)
        norms = np.linalg.norm(cents, axis=1)
        gram = cents @ cents.T
        s = 0.0
        for i in range(P):
            for j in range(P):
                if i != j and norms[i] > 0 and norms[j] > 0:
                    c = gram[i, j] / (norms[i] * norms[j])
                    s += abs(c) if absolute else c
        vals[k] = s / (P * (P - 1))
    return float(np.sqrt((n - 1) / n * ((vals - vals.mean()) ** 2).sum()))


def estimate_geometry(
    ensemble: ManifoldEnsemble,
    n_draws: int,
    rng: RngStream,
    workers: int = 1,
    absolute_alignments: bool = False,
) -> GlueReport:
    """Capacity and effective geometry from n_draws anchor samples."""
    draws = collect_anchor_draws(ensemble, n_draws, rng, workers)
    return geometry_from_draws(draws, ensemble.n_manifolds, absolute_alignments)


def capacity_from_geometry(dimension: float, radius: float) -> float:
    """Geometric capacity approximation (1 + R^-2) / D."""
    if dimension <= 0 or radius <= 0:
        raise ValueError(
            "capacity_from_geometry needs positive dimension and radius; "
            "point manifolds (degenerate zeros) have no geometric approximation"
        )
    return (1.0 + radius**-2) / dimension
