"""Clustered count data containers and model parameters.

A dataset is a collection of clusters; within a cluster every observation
shares one latent multiplicative effect, so estimation only ever touches the
data through per-cluster aggregates.  To make fits reproducible bit-for-bit
under reordering of observations or clusters, estimation code consumes the
``canonical`` view, which fixes one deterministic arrangement of the rows
(clusters sorted by id, rows lexicographically within cluster).

Containers are frozen dataclasses and treated as immutable after
construction; all evaluation code is pure, so instances are safe to share
across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import RankDeficiencyError

__all__ = ["Cluster", "ClusteredDataset", "ModelParams", "PHI_FLOOR"]

# Dispersion floor: the random-effect density is undefined at phi = 0, so
# fits are constrained to phi >= PHI_FLOOR; a fit at the floor is effectively
# an ordinary Poisson regression.
PHI_FLOOR = 1e-6


@dataclass(frozen=True)
class Cluster:
    """One cluster: counts ``y`` (length n_k) and covariate rows ``X`` (n_k x p)."""

    id: str
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"cluster {self.id!r}: X must be 2-d, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(
                f"cluster {self.id!r}: y length {y.shape} does not match X rows {X.shape}"
            )
        if y.shape[0] < 1:
            raise ValueError(f"cluster {self.id!r}: must contain at least one observation")
        if np.any(y < 0):
            raise ValueError(f"cluster {self.id!r}: counts must be non-negative")
        if not np.all(np.isfinite(X)):
            raise ValueError(f"cluster {self.id!r}: covariates must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class _CanonicalView:
    """Deterministic arrangement of a dataset's stacked rows.

    ``perm`` maps canonical row positions to stacked-original positions, so
    ``stacked_array[perm]`` produces the canonical arrays.  ``starts`` and
    ``sizes`` delimit clusters in canonical cluster order (sorted by id).
    """

    y: np.ndarray
    X: np.ndarray
    starts: np.ndarray
    sizes: np.ndarray
    perm: np.ndarray
    cluster_order: tuple[int, ...]


@dataclass(frozen=True)
class ClusteredDataset:
    clusters: tuple[Cluster, ...]

    def __post_init__(self):
        clusters = tuple(self.clusters)
        if len(clusters) < 1:
            raise ValueError("dataset must contain at least one cluster")
        p = clusters[0].X.shape[1]
        if any(c.X.shape[1] != p for c in clusters):
            raise ValueError("all clusters must share the same covariate dimension")
        ids = [c.id for c in clusters]
        if len(set(ids)) != len(ids):
            raise ValueError("cluster ids must be unique")
        object.__setattr__(self, "clusters", clusters)

    @property
    def q(self) -> int:
        return len(self.clusters)

    @property
    def p(self) -> int:
        return self.clusters[0].X.shape[1]

    @property
    def n(self) -> int:
        return sum(c.n for c in self.clusters)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.n for c in self.clusters], dtype=np.int64)

    @cached_property
    def y_stacked(self) -> np.ndarray:
        """Counts in given cluster/row order."""
        return np.concatenate([c.y for c in self.clusters])

    @cached_property
    def X_stacked(self) -> np.ndarray:
        """Design matrix in given cluster/row order."""
        return np.vstack([c.X for c in self.clusters])

    @cached_property
    def cluster_index(self) -> np.ndarray:
        """Per stacked row, the index of its cluster in ``clusters``."""
        return np.repeat(np.arange(self.q), self.sizes)

    @cached_property
    def canonical(self) -> _CanonicalView:
        order = sorted(range(self.q), key=lambda k: str(self.clusters[k].id))
        offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        perm_parts = []
        sizes = []
        for k in order:
            c = self.clusters[k]
            # lexsort keys: last key is primary; sort rows by first column,
            # then second, ..., then y.  Ties are bitwise-identical rows, so
            # their relative order cannot affect any downstream arithmetic.
            keys = tuple([c.y.astype(np.float64)] + [c.X[:, j] for j in range(c.X.shape[1] - 1, -1, -1)])
            local = np.lexsort(keys)
            perm_parts.append(offsets[k] + local)
            sizes.append(c.n)
        perm = np.concatenate(perm_parts)
        sizes = np.array(sizes, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        return _CanonicalView(
            y=self.y_stacked[perm],
            X=self.X_stacked[perm],
            starts=starts,
            sizes=sizes,
            perm=perm,
            cluster_order=tuple(order),
        )

    def assert_full_rank(self):
        """Raise RankDeficiencyError unless the stacked design has full column rank."""
        X = self.X_stacked
        if np.linalg.matrix_rank(X) < self.p:
            raise RankDeficiencyError(
                f"design matrix is rank deficient (p={self.p}, rank={np.linalg.matrix_rank(X)})"
            )

    def with_responses(self, y_new: np.ndarray) -> "ClusteredDataset":
        """New dataset with the same clusters/covariates and replaced counts.

        ``y_new`` is in stacked (given) order.
        """
        y_new = np.asarray(y_new)
        if y_new.shape != (self.n,):
            raise ValueError(f"expected {self.n} responses, got shape {y_new.shape}")
        out = []
        pos = 0
        for c in self.clusters:
            out.append(Cluster(id=c.id, y=y_new[pos : pos + c.n], X=c.X))
            pos += c.n
        return ClusteredDataset(tuple(out))

    def content_hash(self) -> str:
        """Order-sensitive digest of ids, counts and covariates.

        Recorded in fit reports so diagnostics can refuse to run against a
        dataset other than the one that produced the fit.
        """
        h = hashlib.sha256()
        for c in self.clusters:
            h.update(repr(c.id).encode())
            h.update(c.y.tobytes())
            h.update(np.ascontiguousarray(c.X).tobytes())
            h.update(repr(c.X.shape).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ModelParams:
    """Regression coefficients and dispersion: theta = (beta, phi)."""

    beta: np.ndarray
    phi: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        phi = float(self.phi)
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not (phi > 0.0) or not np.isfinite(phi):
            raise ValueError(f"phi must be positive and finite (got {phi!r})")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def as_array(self) -> np.ndarray:
        """Flat parameter vector (beta..., phi)."""
        return np.concatenate([self.beta, [self.phi]])
