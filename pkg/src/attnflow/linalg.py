"""Dense real matrix kernels used throughout the package.

The heavy lifting is delegated to LAPACK through :mod:`numpy.linalg`; this
module pins down the conventions (ordering, sign, tolerances) that the rest
of the package relies on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from attnflow.errors import ContractViolation, NumericalFailure

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class ValueSpectrum:
    """Eigenpairs of a symmetric matrix, eigenvalues in descending order.

    ``eigenvectors[:, k]`` is the unit eigenvector for ``eigenvalues[k]``
    (0-based). The first nonzero component of every eigenvector is positive.
    """

    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def vector(self, k: int) -> NDArray[np.float64]:
        """Eigenvector for the 1-based index ``k`` (``k = 1`` is principal)."""
        if not 1 <= k <= self.dim:
            raise ContractViolation(f"eigen index k={k} outside 1..{self.dim}")
        return self.eigenvectors[:, k - 1]

    def value(self, k: int) -> float:
        if not 1 <= k <= self.dim:
            raise ContractViolation(f"eigen index k={k} outside 1..{self.dim}")
        return float(self.eigenvalues[k - 1])


def _as_matrix(M: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ContractViolation(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractViolation(f"{name} has non-finite entries")
    return A


def _as_square(M: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    A = _as_matrix(M, name)
    if A.shape[0] != A.shape[1]:
        raise ContractViolation(f"{name} must be square, got shape {A.shape}")
    return A


def symmetry_residual(M: ArrayLike) -> float:
    A = _as_square(M)
    return float(np.max(np.abs(A - A.T)))


def fix_signs(vectors: NDArray[np.float64], tol: float = 1e-14) -> NDArray[np.float64]:
    """Flip columns so that each column's first nonzero entry is positive."""
    out = np.array(vectors, dtype=float, copy=True)
    for k in range(out.shape[1]):
        col = out[:, k]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            out[:, k] = -col
    return out


def symmetric_eigen(M: ArrayLike) -> ValueSpectrum:
    """Full orthonormal eigendecomposition of a symmetric matrix.

    Raises
    ------
    ContractViolation
        If ``M`` is not square or ``max |M_ij - M_ji| > 1e-12``.
    """
    A = _as_square(M)
    res = float(np.max(np.abs(A - A.T)))
    if res > SYMMETRY_TOL:
        raise ContractViolation(f"matrix is not symmetric (residual {res:.3e})")
    try:
        w, U = np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"symmetric eigensolver failed: {exc}", A.shape) from exc
    order = np.argsort(-w, kind="stable")
    return ValueSpectrum(eigenvalues=w[order], eigenvectors=fix_signs(U[:, order]))


def sort_eigenvalues(ev: ArrayLike) -> NDArray[np.complex128]:
    """Descending real part, ties broken by descending imaginary part."""
    z = np.asarray(ev, dtype=complex).ravel()
    order = np.lexsort((-z.imag, -z.real))
    return z[order]


def general_eigenvalues(M: ArrayLike) -> NDArray[np.complex128]:
    """All eigenvalues of a real square matrix, with multiplicity.

    Uses LAPACK's Hessenberg QR (``geev``); its internal iteration cap is the
    documented limit, and exceeding it raises :class:`NumericalFailure`.
    """
    A = _as_square(M)
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue iteration did not converge: {exc}", A.shape) from exc
    if not np.all(np.isfinite(ev)):
        raise NumericalFailure("eigenvalue computation produced non-finite values", A.shape)
    return sort_eigenvalues(ev)


def spectral_abscissa(M: ArrayLike, exclude_below: float = 0.0) -> float:
    """Largest real part among eigenvalues with ``|Re| >= exclude_below``.

    Returns ``-inf`` when every eigenvalue is excluded.
    """
    re = general_eigenvalues(M).real
    kept = re[np.abs(re) >= exclude_below] if exclude_below > 0 else re
    return float(kept.max()) if kept.size else float("-inf")


def singular_values(M: ArrayLike) -> NDArray[np.float64]:
    A = _as_matrix(M)
    try:
        return np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}", A.shape) from exc


def numerical_rank(M: ArrayLike, tol: float = 1e-8) -> int:
    """Number of singular values exceeding ``tol * sigma_max``."""
    if not tol > 0:
        raise ContractViolation(f"rank tolerance must be positive, got {tol}")
    s = singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def smallest_singular_value(M: ArrayLike) -> float:
    A = _as_square(M)
    return float(singular_values(A)[-1])


@dataclass(frozen=True)
class SpectrumMatch:
    """Result of a greedy multiset comparison of two eigenvalue lists."""

    max_error: float
    worst_pair: tuple[complex, complex] | None
    pairs: list[tuple[complex, complex]]

    def within(self, tol: float) -> bool:
        return self.max_error <= tol


def match_multisets(a: ArrayLike, b: ArrayLike) -> SpectrumMatch:
    """Greedily pair entries of ``a`` and ``b`` by minimal distance.

    At each round the globally closest remaining pair is removed. The worst
    matched distance and the pair achieving it are reported.
    """
    x = np.asarray(a, dtype=complex).ravel()
    y = np.asarray(b, dtype=complex).ravel()
    if x.size != y.size:
        raise ContractViolation(f"multisets differ in size: {x.size} vs {y.size}")
    if x.size == 0:
        return SpectrumMatch(0.0, None, [])
    D = np.abs(x[:, None] - y[None, :])
    used_x = np.zeros(x.size, dtype=bool)
    used_y = np.zeros(y.size, dtype=bool)
    pairs: list[tuple[complex, complex]] = []
    worst, worst_pair = -1.0, None
    # Sorting all candidate distances once keeps this O(N^2 log N).
    flat = np.argsort(D, axis=None, kind="stable")
    for idx in flat:
        i, j = divmod(int(idx), y.size)
        if used_x[i] or used_y[j]:
            continue
        used_x[i] = used_y[j] = True
        pairs.append((complex(x[i]), complex(y[j])))
        if D[i, j] > worst:
            worst, worst_pair = float(D[i, j]), (complex(x[i]), complex(y[j]))
        if len(pairs) == x.size:
            break
    return SpectrumMatch(worst, worst_pair, pairs)
