"""Vector fields, projected RK4 integration and Lyapunov functions.

Three systems share one integrator:

``oja``
    every token follows ``x' = (I - x x^T) V x`` independently;
``moja``
    multiagent Oja flow ``x_i' = (1/n) (I - x_i x_i^T) V sum_j x_j``;
``self_attention``
    ``x_i' = (I - x_i x_i^T) V sum_j A_ij(x) x_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from numpy.typing import ArrayLike, NDArray

from attnflow.attention import ModelParams, influence_vectors
from attnflow.errors import ContractViolation
from attnflow.geometry import SphereConfiguration, _normalize_rows
from attnflow.linalg import ValueSpectrum

SYSTEMS = ("oja", "moja", "self_attention")

Field = Callable[[NDArray[np.float64]], NDArray[np.float64]]


def _project_rows(X: NDArray[np.float64], Y: NDArray[np.float64]) -> NDArray[np.float64]:
    return Y - np.einsum("ij,ij->i", X, Y)[:, None] * X


def vf_oja(x: ArrayLike, V: ArrayLike) -> NDArray[np.float64]:
    """Oja field ``(I - x x^T) V x``. Accepts a single vector or a stack of rows."""
    X = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    if X.ndim == 1:
        return _project_rows(X[None, :], (V @ X)[None, :])[0]
    return _project_rows(X, X @ V.T)


def vf_multiagent_oja(config, V: ArrayLike) -> NDArray[np.float64]:
    X = np.asarray(config, dtype=float)
    y = np.asarray(V, dtype=float) @ X.sum(axis=0) / X.shape[0]
    return _project_rows(X, np.broadcast_to(y, X.shape))


def vf_self_attention(config, params: ModelParams) -> NDArray[np.float64]:
    X = np.asarray(config, dtype=float)
    return _project_rows(X, influence_vectors(X, params))


def vector_field(system: str, params: ModelParams) -> Field:
    """The right-hand side of ``system`` as a function of an ``(n, d)`` array."""
    if system == "oja":
        V = params.V
        return lambda X: vf_oja(X, V)
    if system == "moja":
        V = params.V
        return lambda X: vf_multiagent_oja(X, V)
    if system == "self_attention":
        return lambda X: vf_self_attention(X, params)
    raise ContractViolation(f"unknown system {system!r}; expected one of {SYSTEMS}")


@dataclass(frozen=True)
class IntegrationOptions:
    h: float = 0.05
    max_time: float = 500.0
    convergence_tol: float = 1e-9
    record_stride: int = 1

    def __post_init__(self):
        if not 0 < self.h <= 0.5:
            raise ContractViolation(f"step h must lie in (0, 0.5], got {self.h}")
        if not self.convergence_tol > 0:
            raise ContractViolation("convergence_tol must be positive")
        if not self.max_time > 0:
            raise ContractViolation("max_time must be positive")
        if int(self.record_stride) < 1:
            raise ContractViolation("record_stride must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    times: NDArray[np.float64]
    states: NDArray[np.float64]   # (samples, n, d)
    termination: str              # converged | max_time | degenerate
    steps: int
    residual: float               # max_i ||f_i||_inf at the final state

    @property
    def final(self) -> SphereConfiguration:
        return SphereConfiguration(self.states[-1])

    def configurations(self) -> list[SphereConfiguration]:
        return [SphereConfiguration(S) for S in self.states]


def rk4_step(f: Field, X: NDArray[np.float64], h: float, k1: NDArray[np.float64] | None = None):
    """One classical RK4 step in ambient space followed by renormalization."""
    if k1 is None:
        k1 = f(X)
    k2 = f(X + 0.5 * h * k1)
    k3 = f(X + 0.5 * h * k2)
    k4 = f(X + h * k3)
    return _normalize_rows(X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def rk4_iter(f: Field, X0: NDArray[np.float64], h: float) -> Iterator[tuple[int, NDArray, NDArray]]:
    """Yield ``(step, X, f(X))`` forever, starting with step 0 at ``X0``."""
    X = np.array(X0, dtype=float)
    step = 0
    while True:
        F = f(X)
        yield step, X, F
        X = rk4_step(f, X, h, F)
        step += 1


def integrate(
    config0,
    system: str,
    params: ModelParams,
    opts: IntegrationOptions = IntegrationOptions(),
) -> Trajectory:
    """Integrate ``system`` from ``config0`` until convergence or ``max_time``.

    Convergence means ``max_i ||f_i||_inf < opts.convergence_tol``. A
    :class:`~attnflow.errors.DegenerateState` from renormalization propagates.
    """
    f = vector_field(system, params)
    X0 = SphereConfiguration(np.asarray(config0, dtype=float)).tokens
    if system == "self_attention" and X0.shape[0] != params.n:
        raise ContractViolation(f"state has {X0.shape[0]} tokens, params expect n={params.n}")
    if X0.shape[1] != params.d:
        raise ContractViolation(f"state dimension {X0.shape[1]} does not match d={params.d}")
    max_steps = int(math.ceil(opts.max_time / opts.h - 1e-9))
    stride = int(opts.record_stride)

    times, states = [], []
    termination = "max_time"
    for step, X, F in rk4_iter(f, X0, opts.h):
        residual = float(np.max(np.abs(F)))
        done = residual < opts.convergence_tol
        if done or step >= max_steps or step % stride == 0:
            times.append(step * opts.h)
            states.append(X)
        if done:
            termination = "converged"
            break
        if step >= max_steps:
            break
    return Trajectory(np.array(times), np.array(states), termination, step, residual)


def lyapunov_oja(x: ArrayLike, spectrum: ValueSpectrum) -> float:
    """``W(x) = (lambda_1 - x^T V x) / 2``."""
    c = spectrum.eigenvectors.T @ np.asarray(x, dtype=float)
    return 0.5 * (spectrum.eigenvalues[0] - float(np.dot(spectrum.eigenvalues, c * c)))


def lyapunov_moja(config, spectrum: ValueSpectrum) -> float:
    """``W(x) = (lambda_1 - (1/n) s^T V s) / 2`` with ``s = sum_j x_j``."""
    X = np.asarray(config, dtype=float)
    c = spectrum.eigenvectors.T @ X.sum(axis=0)
    return 0.5 * (spectrum.eigenvalues[0] - float(np.dot(spectrum.eigenvalues, c * c)) / X.shape[0])
