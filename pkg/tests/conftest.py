"""Shared oracles: loop-based reference formulas and finite differences.

These are written independently of the library (plain loops, no shared
helpers) so agreement is evidence rather than tautology.
"""
import math

import numpy as np
import pytest

from attnflow import ModelParams


def loop_attention(X, Q, K, beta):
    n = len(X)
    A = np.zeros((n, n))
    for i in range(n):
        s = [beta * float(np.dot(Q @ X[i], K @ X[j])) for j in range(n)]
        e = [math.exp(v) for v in s]
        tot = sum(e)
        for j in range(n):
            A[i, j] = e[j] / tot
    return A


def loop_self_field(X, Q, K, V, beta):
    A = loop_attention(X, Q, K, beta)
    out = np.zeros_like(X)
    for i in range(len(X)):
        y = V @ sum(A[i, j] * X[j] for j in range(len(X)))
        out[i] = y - np.dot(X[i], y) * X[i]
    return out


def loop_moja_field(X, V):
    n = len(X)
    s = sum(X[j] for j in range(n))
    out = np.zeros_like(X)
    for i in range(n):
        y = V @ s / n
        out[i] = y - np.dot(X[i], y) * X[i]
    return out


def fd_jacobian(f, X, step=1e-6):
    """Central-difference Jacobian of ``f`` in ambient coordinates, stacked row-major."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    J = np.zeros((n * d, n * d))
    for c in range(n * d):
        E = np.zeros(n * d)
        E[c] = step
        E = E.reshape(n, d)
        J[:, c] = ((f(X + E) - f(X - E)) / (2 * step)).reshape(-1)
    return J


def random_params(rng, d, n, beta=1.0, gap=1e-3):
    """Gaussian Q, K and symmetrized V with a simple positive top eigenvalue."""
    Q = rng.standard_normal((d, d))
    K = rng.standard_normal((d, d))
    while True:
        M = rng.standard_normal((d, d))
        V = (M + M.T) / 2
        lam = np.sort(np.linalg.eigvalsh(V))[::-1]
        if lam[0] > 0 and lam[0] - lam[1] > gap:
            return ModelParams(Q, K, V, beta, n)


def random_state(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
