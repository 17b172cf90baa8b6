"""Synthetic manifold ensembles with ground-truth geometry knobs.

Spherical manifolds live in a D-dimensional subspace of R^d: each point is
center + R * (unit-normalized combination of D axes) + eps * noise, with
centers, axes and noise all drawn isotropically at scale 1/sqrt(d).  Optional
auto-regressive correlations can be mixed across manifolds (centers and axes)
and a center-axis coupling applied, so that every effective geometric measure
has a dial to validate against.

Train/test pairs share centers, axes, and intrinsic coordinates; only the
additive noise is redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ManifoldEnsemble, PointCloudManifold, RngStream

__all__ = [
    "SphericalSpec",
    "CorrelationSpec",
    "SphericalParams",
    "draw_spherical_params",
    "apply_correlations",
    "assemble_ensembles",
    "gen_isotropic_spherical",
    "gen_correlated_spherical",
    "gen_isotropic_gaussian",
    "assign_labels",
]


@dataclass(frozen=True)
class SphericalSpec:
    """P manifolds of M points each on a radius-R, D-dimensional shell in R^d."""

    P: int
    M: int
    D: int
    R: float
    d: int
    noise_eps: float = 1e-2

    def __post_init__(self):
        if not (1 <= self.D <= self.d):
            raise ValueError(f"need 1 <= D <= d, got D={self.D}, d={self.d}")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.M < 1 or self.P < 1:
            raise ValueError("P and M must be >= 1")


@dataclass(frozen=True)
class CorrelationSpec:
    """AR(1) correlation strengths across manifolds plus center-axis coupling."""

    rho_center: float = 0.0
    rho_axis: float = 0.0
    psi_center_axis: float = 0.0

    def __post_init__(self):
        for name in ("rho_center", "rho_axis"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.psi_center_axis < 0:
            raise ValueError("psi_center_axis must be >= 0")


@dataclass(frozen=True)
class SphericalParams:
    """Raw generator state before assembly into point clouds."""

    spec: SphericalSpec
    centers: np.ndarray       # (P, d)
    axes: np.ndarray          # (P, D, d)
    coords: np.ndarray        # (P, M, D)
    noise_train: np.ndarray   # (P, M, d)
    noise_test: np.ndarray    # (P, M, d)


def draw_spherical_params(spec: SphericalSpec, rng: RngStream) -> SphericalParams:
    """Isotropic draws; manifold i consumes substream i so P can be widened."""
    P, M, D, d = spec.P, spec.M, spec.D, spec.d
    centers = np.empty((P, d))
    axes = np.empty((P, D, d))
    coords = np.empty((P, M, D))
    noise_tr = np.empty((P, M, d))
    noise_te = np.empty((P, M, d))
    root = np.sqrt(d)
    for i in range(P):
        g = rng.substream(i).generator()
        centers[i] = g.standard_normal(d) / root
        axes[i] = g.standard_normal((D, d)) / root
        coords[i] = g.standard_normal((M, D))
        noise_tr[i] = g.standard_normal((M, d)) / root
        noise_te[i] = g.standard_normal((M, d)) / root
    return SphericalParams(spec, centers, axes, coords, noise_tr, noise_te)


def _ar1_cholesky(rho: float, P: int) -> np.ndarray:
    C = rho ** np.abs(np.subtract.outer(np.arange(P), np.arange(P)))
    return np.linalg.cholesky(C)


def apply_correlations(params: SphericalParams, corr: CorrelationSpec, rng: RngStream) -> SphericalParams:
    """Mix centers/axes across manifolds by chol(AR1) and couple center norms.

    With all strengths zero this is the identity (chol(I) = I and the psi
    factor is exactly 1), so correlated generation degrades gracefully to the
    isotropic one on matched streams.
    """
    P = params.spec.P
    Lc = _ar1_cholesky(corr.rho_center, P)
    La = _ar1_cholesky(corr.rho_axis, P)
    centers = Lc @ params.centers
    axes = params.axes.copy()
    for j in range(params.spec.D):
        axes[:, j, :] = La @ params.axes[:, j, :]
    q = rng.generator().standard_normal(P)
    centers = centers * (1.0 + corr.psi_center_axis * q)[:, None]
    return replace(params, centers=centers, axes=axes)


def assemble_ensembles(params: SphericalParams) -> tuple[ManifoldEnsemble, ManifoldEnsemble]:
    """Points = center + R * unit(coords @ axes) + eps * noise, per split."""
    spec = params.spec
    out = []
    for noise in (params.noise_train, params.noise_test):
        manifolds = []
        for i in range(spec.P):
            pre = params.coords[i] @ params.axes[i]
            pre = pre / np.linalg.norm(pre, axis=1, keepdims=True)
            pts = params.centers[i] + spec.R * pre + spec.noise_eps * noise[i]
            manifolds.append(PointCloudManifold(i, pts))
        out.append(ManifoldEnsemble(tuple(manifolds), spec.d))
    return out[0], out[1]


def gen_isotropic_spherical(spec: SphericalSpec, rng: RngStream):
    """Uncorrelated spherical manifolds; returns (train, test)."""
    return assemble_ensembles(draw_spherical_params(spec, rng))


def gen_correlated_spherical(spec: SphericalSpec, corr: CorrelationSpec, rng: RngStream):
    """Spherical manifolds with AR(1) center/axis correlations; (train, test).

    The psi scaling draws use a dedicated substream so the underlying
    isotropic draws match gen_isotropic_spherical on the same rng.
    """
    params = draw_spherical_params(spec, rng)
    params = apply_correlations(params, corr, rng.substream(spec.P))
    return assemble_ensembles(params)


def gen_isotropic_gaussian(P: int, M: int, R: float, d: int, rng: RngStream):
    """Full-dimensional Gaussian clouds (no intrinsic-dimension restriction)."""
    if P < 1 or M < 1 or d < 1:
        raise ValueError("P, M, d must be >= 1")
    if R < 0:
        raise ValueError("R must be >= 0")
    root = np.sqrt(d)
    train, test = [], []
    for i in range(P):
        g = rng.substream(i).generator()
        center = g.standard_normal(d) / root
        v_tr = g.standard_normal((M, d)) / root
        v_te = g.standard_normal((M, d)) / root
        train.append(PointCloudManifold(i, center + R * v_tr))
        test.append(PointCloudManifold(i, center + R * v_te))
    return (
        ManifoldEnsemble(tuple(train), d),
        ManifoldEnsemble(tuple(test), d),
    )


def assign_labels(P: int, rng: RngStream) -> np.ndarray:
    """Uniform i.i.d. +/-1 label per manifold."""
    if P < 1:
        raise ValueError("P must be >= 1")
    g = rng.generator()
    return np.where(g.random(P) < 0.5, -1.0, 1.0)
