"""Core data model: point-cloud manifolds, ensembles, dichotomies, RNG streams.

All estimators in this package consume a :class:`ManifoldEnsemble` — an ordered
collection of labeled point clouds sharing one ambient dimension.  Everything
here is immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointCloudManifold",
    "ManifoldEnsemble",
    "Dichotomy",
    "RngStream",
    "build_ensemble",
    "sample_dichotomy",
    "sample_gaussian_probe",
]


class DataError(ValueError):
    """Raised when input data violates a structural precondition."""


def _as_matrix(points) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2:
        raise DataError(f"points must be a 2-D array, got ndim={pts.ndim}")
    return pts


@dataclass(frozen=True)
class PointCloudManifold:
    """One labeled point cloud: an M x N matrix whose rows generate the hull."""

    label_id: int
    points: np.ndarray

    def __post_init__(self):
        pts = _as_matrix(self.points)
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError(f"manifold needs M >= 1 and N >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError(f"manifold {self.label_id} contains non-finite entries")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ManifoldEnsemble:
    """Ordered list of P manifolds sharing one ambient dimension.

    ``source_labels`` maps the dense label ids 0..P-1 back to whatever labels
    the caller supplied at ingestion; estimators only ever see the dense ids.
    """

    manifolds: tuple
    ambient_dim: int
    source_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        mans = tuple(self.manifolds)
        if len(mans) < 1:
            raise DataError("ensemble needs at least one manifold")
        dims = {m.ambient_dim for m in mans}
        if dims != {self.ambient_dim}:
            raise DataError(f"ambient dims {sorted(dims)} != declared {self.ambient_dim}")
        labels = [m.label_id for m in mans]
        if len(set(labels)) != len(labels):
            raise DataError("manifold labels must be unique")
        object.__setattr__(self, "manifolds", mans)

    @property
    def n_manifolds(self) -> int:
        return len(self.manifolds)

    @property
    def total_points(self) -> int:
        return sum(m.n_points for m in self.manifolds)

    def stacked_points(self) -> tuple[np.ndarray, np.ndarray]:
        """All points row-stacked (K x N) plus the owning manifold index per row."""
        X = np.vstack([m.points for m in self.manifolds])
        owner = np.concatenate(
            [np.full(m.n_points, i, dtype=np.intp) for i, m in enumerate(self.manifolds)]
        )
        return X, owner

    def flatten(self) -> list:
        """Back to a list of (label, vector) pairs; inverse of build_ensemble."""
        out = []
        for m in self.manifolds:
            lab = self.source_labels.get(m.label_id, m.label_id)
            for row in m.points:
                out.append((lab, row.copy()))
        return out

    def transform(self, fn) -> "ManifoldEnsemble":
        """Apply ``fn`` to every M x N point block (e.g. a projection)."""
        mans = [PointCloudManifold(m.label_id, fn(m.points)) for m in self.manifolds]
        return ManifoldEnsemble(tuple(mans), mans[0].ambient_dim, dict(self.source_labels))


@dataclass(frozen=True)
class Dichotomy:
    """A +/-1 label per manifold."""

    signs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signs, dtype=np.float64)
        if s.ndim != 1 or not np.all(np.abs(s) == 1.0):
            raise DataError("dichotomy must be a 1-D vector over {-1, +1}")
        s = np.ascontiguousarray(s)
        s.setflags(write=False)
        object.__setattr__(self, "signs", s)

    def __len__(self) -> int:
        return len(self.signs)


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream.

    Identical ``(seed, stream_id)`` always reproduces identical draws, and
    distinct stream ids are statistically independent (Philox keyed through a
    SeedSequence spawn path).  Monte-Carlo loops should hand draw ``k`` the
    substream ``rng.substream(k)`` so that serial and parallel execution see
    the same randomness.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path + (self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, k: int) -> "RngStream":
        return RngStream(self.seed, k, self.path + (self.stream_id,))


def build_ensemble(labeled_vectors) -> ManifoldEnsemble:
    """Group (label, vector) pairs into a ManifoldEnsemble.

    Labels are mapped to dense integers 0..P-1 in ascending order of the
    original labels; the originals are kept in ``source_labels``.
    """
    items = list(labeled_vectors)
    if not items:
        raise DataError("empty input")
    groups: dict = {}
    for label, vec in items:
        v = np.asarray(vec, dtype=np.float64).ravel()
        groups.setdefault(label, []).append(v)
    dims = {v.shape[0] for vecs in groups.values() for v in vecs}
    if len(dims) != 1:
        raise DataError(f"inconsistent vector dimensions: {sorted(dims)}")
    (dim,) = dims
    if dim < 1:
        raise DataError("vectors must have at least one coordinate")
    manifolds = []
    source = {}
    for dense_id, label in enumerate(sorted(groups)):
        manifolds.append(PointCloudManifold(dense_id, np.vstack(groups[label])))
        source[dense_id] = label
    return ManifoldEnsemble(tuple(manifolds), dim, source)


def sample_dichotomy(P: int, rng: RngStream) -> Dichotomy:
    """Uniform i.i.d. +/-1 signs for P manifolds."""
    if P < 1:
        raise DataError("P must be >= 1")
    g = rng.generator()
    signs = np.where(g.random(P) < 0.5, -1.0, 1.0)
    return Dichotomy(signs)


def sample_gaussian_probe(N: int, rng: RngStream) -> np.ndarray:
    """i.i.d. standard normal N-vector."""
    if N < 1:
        raise DataError("N must be >= 1")
    return rng.generator().standard_normal(N)
