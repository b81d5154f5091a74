"""Softmax attention matrix, its derivatives, and influence vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from attnflow.errors import ContractViolation
from attnflow.linalg import SYMMETRY_TOL, ValueSpectrum, symmetric_eigen

GAP_MIN = 1e-6


@dataclass(frozen=True, eq=False)
class ModelParams:
    """One self-attention system: query/key/value matrices, inverse temperature, token count.

    ``beta = 0`` is allowed and makes the attention uniform, which is exactly
    the multiagent Oja flow.
    """

    Q: NDArray[np.float64]
    K: NDArray[np.float64]
    V: NDArray[np.float64]
    beta: float = 1.0
    n: int = 1

    def __post_init__(self):
        Q, K, V = (np.array(M, dtype=float) for M in (self.Q, self.K, self.V))
        d = V.shape[0] if V.ndim == 2 else -1
        for name, M in (("Q", Q), ("K", K), ("V", V)):
            if M.shape != (d, d):
                raise ContractViolation(f"{name} must be {d}x{d}, got shape {M.shape}")
            if not np.all(np.isfinite(M)):
                raise ContractViolation(f"{name} has non-finite entries")
        if d < 2:
            raise ContractViolation(f"dimension d must be >= 2, got {d}")
        res = float(np.max(np.abs(V - V.T)))
        if res > SYMMETRY_TOL:
            raise ContractViolation(f"V must be symmetric (residual {res:.3e})")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ContractViolation(f"beta must be finite and >= 0, got {self.beta}")
        if int(self.n) < 1:
            raise ContractViolation(f"n must be >= 1, got {self.n}")
        for name, M in (("Q", Q), ("K", K), ("V", V)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "n", int(self.n))

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def QtK(self) -> NDArray[np.float64]:
        return self.Q.T @ self.K

    def spectrum(self) -> ValueSpectrum:
        return symmetric_eigen(self.V)

    def check_assumption(self, gap_min: float = GAP_MIN) -> None:
        """Raise unless lambda_1(V) > 0 and lambda_1 - lambda_2 > gap_min."""
        lam = self.spectrum().eigenvalues
        if not lam[0] > 0:
            raise ContractViolation(f"principal eigenvalue must be positive, got {lam[0]:.6g}")
        if not lam[0] - lam[1] > gap_min:
            raise ContractViolation(f"principal eigenvalue not simple (gap {lam[0] - lam[1]:.3e})")

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(self.Q, self.K, self.V, beta, self.n)

    def with_n(self, n: int) -> "ModelParams":
        return ModelParams(self.Q, self.K, self.V, self.beta, n)


def _tokens(config, params: ModelParams) -> NDArray[np.float64]:
    X = np.asarray(config, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ContractViolation(f"state shape {X.shape} does not match d={params.d}")
    if X.shape[0] != params.n:
        raise ContractViolation(f"state has {X.shape[0]} tokens, params expect n={params.n}")
    return X


def attention_scores(X: NDArray[np.float64], params: ModelParams) -> NDArray[np.float64]:
    """``S_ij = beta <Q x_i, K x_j>``."""
    return params.beta * (X @ params.Q.T) @ (X @ params.K.T).T


def attention_matrix(config, params: ModelParams) -> NDArray[np.float64]:
    """Row-stochastic softmax attention ``A_ij(x)``, log-sum-exp stabilized."""
    X = _tokens(config, params)
    S = attention_scores(X, params)
    E = np.exp(S - S.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def attention_jacobian_slices(config, params: ModelParams, i: int) -> NDArray[np.float64]:
    """Gradients of row ``i`` of the attention matrix.

    Returns ``G`` of shape ``(n, n, d)`` with ``G[j, h] = dA_ij / dx_h``.
    """
    X = _tokens(config, params)
    n = X.shape[0]
    if not 0 <= i < n:
        raise ContractViolation(f"row index {i} outside 0..{n - 1}")
    A = attention_matrix(X, params)
    a = A[i]
    M = params.beta * params.QtK
    qi = X[i] @ M                     # beta x_i^T Q^T K
    kx = X @ M.T                      # rows: beta x_l^T K^T Q
    mean_k = a @ kx

    G = np.zeros((n, n, X.shape[1]))
    # h != i: beta x_i^T Q^T K (A_ih delta_jh - A_ij A_ih)
    G[:, :, :] = -(a[:, None] * a[None, :])[:, :, None] * qi[None, None, :]
    G[np.arange(n), np.arange(n), :] += a[:, None] * qi[None, :]
    # h == i: (x_j^T K^T Q - x_i^T Q^T K A_ii - sum_l x_l^T K^T Q A_il) A_ij + x_i^T Q^T K A_ii delta_ij
    G[:, i, :] = (kx - a[i] * qi - mean_k) * a[:, None]
    G[i, i, :] += a[i] * qi
    return G


def influence_vectors(config, params: ModelParams) -> NDArray[np.float64]:
    """Rows ``y_i = V sum_j A_ij x_j``."""
    X = _tokens(config, params)
    A = attention_matrix(X, params)
    return (A @ X) @ params.V.T
