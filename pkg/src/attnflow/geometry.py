"""States on the product of unit spheres (S^{d-1})^n."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from attnflow.errors import ContractViolation, DegenerateState
from attnflow.linalg import ValueSpectrum

UNIT_TOL = 1e-9
MIN_NORM = 1e-8
TOL_CLUSTER = 1e-5
TOL_ALIGN = 1e-6


@dataclass(frozen=True, eq=False)
class SphereConfiguration:
    """``n`` unit tokens in ``R^d``, stored row-wise as an ``(n, d)`` array."""

    tokens: NDArray[np.float64]

    def __post_init__(self):
        X = np.array(self.tokens, dtype=float)
        if X.ndim != 2:
            raise ContractViolation(f"tokens must be an (n, d) array, got shape {X.shape}")
        n, d = X.shape
        if d < 2 or n < 1:
            raise ContractViolation(f"need d >= 2 and n >= 1, got d={d}, n={n}")
        err = np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0))
        if not err <= UNIT_TOL:
            raise ContractViolation(f"tokens are not unit vectors (max norm error {err:.3e})")
        X.setflags(write=False)
        object.__setattr__(self, "tokens", X)

    @classmethod
    def from_unnormalized(cls, X: ArrayLike) -> "SphereConfiguration":
        return cls(_normalize_rows(np.asarray(X, dtype=float)))

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.tokens if dtype is None else self.tokens.astype(dtype)

    def __neg__(self) -> "SphereConfiguration":
        return SphereConfiguration(-self.tokens)

    def __eq__(self, other):
        if not isinstance(other, SphereConfiguration):
            return NotImplemented
        return np.array_equal(self.tokens, other.tokens)

    def stacked(self) -> NDArray[np.float64]:
        """The ``nd`` state vector ``[x_1; ...; x_n]``."""
        return self.tokens.reshape(-1).copy()


def _normalize_rows(X: NDArray[np.float64]) -> NDArray[np.float64]:
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms < MIN_NORM) or not np.all(np.isfinite(norms)):
        bad = int(np.argmin(np.where(np.isfinite(norms), norms, -1.0)))
        raise DegenerateState(
            f"token {bad} has norm {norms[bad]:.3e}; integration step is likely too large"
        )
    return X / norms[:, None]


def project_tangent(x: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
    """Return ``(I - x x^T) y`` for a unit vector ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
        raise ContractViolation("project_tangent requires a unit base point")
    return y - np.dot(x, y) * x


def renormalize(config: SphereConfiguration | ArrayLike) -> SphereConfiguration:
    """Scale every token back onto the sphere."""
    return SphereConfiguration(_normalize_rows(np.asarray(config, dtype=float)))


def sample_uniform_sphere(d: int, n: int, rng_seed) -> SphereConfiguration:
    """``n`` i.i.d. uniform points on S^{d-1} (normalized Gaussians).

    ``rng_seed`` is an integer seed for :class:`attnflow.rng.SplitMix64` or an
    existing generator instance.
    """
    from attnflow.rng import SplitMix64

    if d < 2 or n < 1:
        raise ContractViolation(f"need d >= 2 and n >= 1, got d={d}, n={n}")
    rng = rng_seed if isinstance(rng_seed, SplitMix64) else SplitMix64(rng_seed)
    G = rng.normal((n, d))
    return SphereConfiguration(_normalize_rows(G))


@dataclass(frozen=True)
class ClusterPartition:
    assignment: NDArray[np.int64]
    representatives: NDArray[np.float64]

    @property
    def m(self) -> int:
        return self.representatives.shape[0]

    def sizes(self) -> NDArray[np.int64]:
        return np.bincount(self.assignment, minlength=self.m)


def detect_clusters(config: SphereConfiguration | ArrayLike, tol_cluster: float = TOL_CLUSTER) -> ClusterPartition:
    """Single-linkage grouping of tokens at chordal distance below ``tol_cluster``.

    Labels are numbered in order of first appearance.
    """
    if not 0 < tol_cluster < 0.5:
        raise ContractViolation(f"tol_cluster must lie in (0, 0.5), got {tol_cluster}")
    X = np.asarray(config, dtype=float)
    D = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    _, raw = connected_components(D < tol_cluster, directed=False)
    # relabel by first appearance so output does not depend on scipy internals
    relabel: dict[int, int] = {}
    labels = np.array([relabel.setdefault(int(r), len(relabel)) for r in raw], dtype=np.int64)
    reps = np.array([X[labels == c].mean(axis=0) for c in range(len(relabel))])
    reps /= np.linalg.norm(reps, axis=1)[:, None]
    return ClusterPartition(assignment=labels, representatives=reps)


def alignment(
    config: SphereConfiguration | ArrayLike,
    spectrum: ValueSpectrum,
    tol_align: float = TOL_ALIGN,
) -> tuple[int | None, NDArray[np.int64]]:
    """Find the eigenvector every token is (anti)parallel to.

    Returns the 1-based index ``k`` maximizing ``min_i |<x_i, v_k>|`` and the
    per-token signs of ``<x_i, v_k>``. ``k`` is None when that minimum falls
    below ``1 - tol_align``.
    """
    X = np.asarray(config, dtype=float)
    C = X @ spectrum.eigenvectors
    worst = np.min(np.abs(C), axis=0)
    k0 = int(np.argmax(worst))
    signs = np.where(C[:, k0] >= 0, 1, -1).astype(np.int64)
    if worst[k0] < 1.0 - tol_align:
        return None, signs
    return k0 + 1, signs
