"""Jacobians, closed-form spectra and equilibrium classification.

All Jacobians are taken in the ambient space R^{nd} with the stacked state
``[x_1; ...; x_n]``. At an equilibrium the tangent space of (S^{d-1})^n is
invariant under the Jacobian, and the remaining n "radial" eigenvalues are
``-2 <x_i, y_i>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from attnflow.attention import (
    ModelParams,
    attention_jacobian_slices,
    attention_matrix,
    influence_vectors,
)
from attnflow.errors import CertificateUnavailable, ContractViolation
from attnflow.geometry import TOL_ALIGN, TOL_CLUSTER, alignment, detect_clusters
from attnflow.linalg import (
    ValueSpectrum,
    general_eigenvalues,
    numerical_rank,
    smallest_singular_value,
)

TOL_MARGIN = 1e-7
TOL_ZERO_MODE = 1e-8

STABLE, UNSTABLE, MARGINAL = "stable", "unstable", "marginal"


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------

def _blocks_to_matrix(B: NDArray[np.float64]) -> NDArray[np.float64]:
    n, _, d, _ = B.shape
    return B.transpose(0, 2, 1, 3).reshape(n * d, n * d)


def jacobian_moja(config, V) -> NDArray[np.float64]:
    """Ambient Jacobian of the multiagent Oja field, shape ``(nd, nd)``."""
    X = np.asarray(config, dtype=float)
    V = np.asarray(V, dtype=float)
    n, d = X.shape
    I = np.eye(d)
    PV = (I[None] - np.einsum("ia,ib->iab", X, X)) @ V / n        # (n, d, d)
    y = V @ X.sum(axis=0) / n
    B = np.broadcast_to(PV[:, None], (n, n, d, d)).copy()
    for i in range(n):
        B[i, i] -= np.dot(X[i], y) * I + np.outer(X[i], y)
    return _blocks_to_matrix(B)


def jacobian_self(config, params: ModelParams) -> NDArray[np.float64]:
    """Ambient Jacobian of the self-attention field, shape ``(nd, nd)``.

    Block ``(i, h)`` is ``P_i V (A_ih I + sum_j x_j dA_ij/dx_h)`` minus, on the
    diagonal, ``<x_i, y_i> I + x_i y_i^T``.
    """
    X = np.asarray(config, dtype=float)
    n, d = X.shape
    A = attention_matrix(X, params)
    Y = influence_vectors(X, params)
    V = params.V
    I = np.eye(d)
    B = np.empty((n, n, d, d))
    for i in range(n):
        G = attention_jacobian_slices(X, params, i)             # (j, h, d)
        dy = A[i][:, None, None] * I[None] + np.einsum("ja,jhb->hab", X, G)
        PiV = V - np.outer(X[i], X[i] @ V)
        B[i] = PiV[None] @ dy
        B[i, i] -= np.dot(X[i], Y[i]) * I + np.outer(X[i], Y[i])
    return _blocks_to_matrix(B)


def jacobian(system: str, config, params: ModelParams) -> NDArray[np.float64]:
    if system == "moja":
        return jacobian_moja(config, params.V)
    if system == "self_attention":
        return jacobian_self(config, params)
    if system == "oja":
        X = np.asarray(config, dtype=float)
        n, d = X.shape
        J = np.zeros((n * d, n * d))
        for i in range(n):
            J[i * d:(i + 1) * d, i * d:(i + 1) * d] = jacobian_moja(X[i:i + 1], params.V)
        return J
    raise ContractViolation(f"unknown system {system!r}")


def tangent_basis(config) -> NDArray[np.float64]:
    """Orthonormal basis of the tangent space of (S^{d-1})^n, shape ``(nd, n(d-1))``."""
    X = np.asarray(config, dtype=float)
    n, d = X.shape
    B = np.zeros((n * d, n * (d - 1)))
    for i, x in enumerate(X):
        # complete x to an orthonormal basis; the other d-1 columns span T_x
        U, _, _ = np.linalg.svd(x[:, None], full_matrices=True)
        B[i * d:(i + 1) * d, i * (d - 1):(i + 1) * (d - 1)] = U[:, 1:]
    return B


def tangent_jacobian(J: NDArray[np.float64], config) -> NDArray[np.float64]:
    """Restriction of an ambient Jacobian to the tangent space of the state."""
    B = tangent_basis(config)
    return B.T @ J @ B


# --------------------------------------------------------------------------
# Closed-form spectra
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumEntry:
    value: float
    multiplicity: int
    kind: str          # radial | transversal | bulk


@dataclass(frozen=True)
class AnalyticSpectrum:
    entries: tuple[SpectrumEntry, ...]
    source: tuple           # ("consensus", k) or ("bipartite", k, n1, n2)

    @property
    def total_multiplicity(self) -> int:
        return sum(e.multiplicity for e in self.entries)

    def values(self, kinds: tuple[str, ...] | None = None) -> NDArray[np.float64]:
        """All eigenvalues expanded by multiplicity, sorted descending."""
        vals = [e.value for e in self.entries if kinds is None or e.kind in kinds
                for _ in range(e.multiplicity)]
        return np.sort(np.array(vals, dtype=float))[::-1]

    def abscissa(self, kinds: tuple[str, ...] | None = None) -> float:
        v = self.values(kinds)
        return float(v[0]) if v.size else float("-inf")


def consensus_spectrum(spectrum: ValueSpectrum, k: int, n: int) -> AnalyticSpectrum:
    """Jacobian eigenvalues at the consensus ``x_i = v_k`` (1-based ``k``).

    Identical for the multiagent Oja and self-attention flows.
    """
    d = spectrum.dim
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} outside 1..{d}")
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    lam = spectrum.eigenvalues
    lk = float(lam[k - 1])
    entries = [SpectrumEntry(-2.0 * lk, n, "radial")]
    entries += [SpectrumEntry(float(lam[h] - lk), 1, "transversal") for h in range(d) if h != k - 1]
    bulk = n * d - n - d + 1
    if bulk:
        entries.append(SpectrumEntry(-lk, bulk, "bulk"))
    return AnalyticSpectrum(tuple(entries), ("consensus", k))


@dataclass(frozen=True)
class BipartiteCoefficients:
    """Scalars of the bipartite consensus ``n1`` tokens at ``v_k``, ``n2`` at ``-v_k``.

    ``a, b, c, d`` and ``lam_j`` are indexed by ``j`` in ``others`` (all
    1-based eigen indices except ``k``).
    """

    k: int
    n1: int
    n2: int
    lam_k: float
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    delta1: float
    delta2: float
    others: tuple[int, ...]
    lam_j: NDArray[np.float64]
    a: NDArray[np.float64]
    b: NDArray[np.float64]
    c: NDArray[np.float64]
    d: NDArray[np.float64]

    def gammas(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """``(gamma_plus, gamma_minus)`` per off-index ``j``."""
        disc = (self.a - self.d) ** 2 + 4.0 * self.b * self.c
        root = np.sqrt(np.maximum(disc, 0.0))
        return 0.5 * (self.a + self.d + root), 0.5 * (self.a + self.d - root)

    def attention_blocks(self) -> NDArray[np.float64]:
        """The four distinct attention entries ``[[A11, A12], [A21, A22]]`` by group."""
        return np.array([[self.alpha1 / self.beta1, self.alpha2 / self.beta1],
                         [self.alpha2 / self.beta2, self.alpha1 / self.beta2]])


def bipartite_coefficients(params: ModelParams, spectrum: ValueSpectrum, k: int, n1: int, n2: int) -> BipartiteCoefficients:
    d = spectrum.dim
    if not 1 <= k <= d:
        raise ContractViolation(f"k={k} outside 1..{d}")
    if n1 < 1 or n2 < 1:
        raise ContractViolation(f"bipartite split needs n1, n2 >= 1, got ({n1}, {n2}); use consensus_spectrum")
    v = spectrum.vector(k)
    lam = spectrum.eigenvalues
    lk = float(lam[k - 1])
    z = params.beta * float(v @ params.QtK @ v)
    alpha1, alpha2 = float(np.exp(z)), float(np.exp(-z))
    beta1 = n1 * alpha1 + n2 * alpha2
    beta2 = n1 * alpha2 + n2 * alpha1
    delta1 = (n1 * alpha1 - n2 * alpha2) / beta1
    delta2 = (n2 * alpha1 - n1 * alpha2) / beta2
    others = tuple(j for j in range(1, d + 1) if j != k)
    lj = np.array([lam[j - 1] for j in others], dtype=float)
    a = -delta1 * lk + lj * n1 * alpha1 / beta1
    b = lj * n2 * alpha2 / beta1
    c = lj * n1 * alpha2 / beta2
    dd = -delta2 * lk + lj * n2 * alpha1 / beta2
    return BipartiteCoefficients(k, n1, n2, lk, alpha1, alpha2, beta1, beta2, delta1, delta2,
                                 others, lj, a, b, c, dd)


def bipartite_spectrum(params: ModelParams, spectrum: ValueSpectrum, k: int, n1: int, n2: int):
    """Closed-form Jacobian spectrum at a bipartite consensus point.

    Returns ``(coefficients, AnalyticSpectrum)``. The bulk class splits as
    ``-delta1 lambda_k`` with multiplicity ``(n1-1)(d-1)`` and
    ``-delta2 lambda_k`` with multiplicity ``(n2-1)(d-1)``.
    """
    co = bipartite_coefficients(params, spectrum, k, n1, n2)
    d = spectrum.dim
    lk = co.lam_k
    entries = [SpectrumEntry(-2.0 * co.delta1 * lk, n1, "radial"),
               SpectrumEntry(-2.0 * co.delta2 * lk, n2, "radial")]
    gp, gm = co.gammas()
    for p, m in zip(gp, gm):
        entries += [SpectrumEntry(float(p), 1, "transversal"), SpectrumEntry(float(m), 1, "transversal")]
    for delta, size in ((co.delta1, n1), (co.delta2, n2)):
        mult = (size - 1) * (d - 1)
        if mult:
            entries.append(SpectrumEntry(-delta * lk, mult, "bulk"))
    return co, AnalyticSpectrum(tuple(entries), ("bipartite", k, n1, n2))


def _verdict_from_margins(quantities, tol_margin: float) -> str:
    """Each quantity must be strictly negative for stability."""
    q = np.asarray(quantities, dtype=float)
    if np.any(q > tol_margin):
        return UNSTABLE
    if np.any(q >= -tol_margin):
        return MARGINAL
    return STABLE


def bipartite_stability_test(params: ModelParams, spectrum: ValueSpectrum, k: int, n1: int, n2: int,
                             tol_margin: float = TOL_MARGIN, manifold: bool = False) -> str:
    """Stable iff ``delta_l lambda_k > 0`` (l = 1, 2) and, for every ``j != k``,
    ``a_j + d_j < 0`` and ``a_j d_j > b_j c_j``.

    A quantity on the wrong side by more than ``tol_margin`` makes the point
    unstable; otherwise any quantity within ``tol_margin`` of zero gives
    ``"marginal"``.

    With ``manifold=True`` the verdict refers to the flow on the sphere
    product only: for a group of size one, ``delta_l lambda_k`` enters solely
    through a radial eigenvalue normal to the sphere and is not tested.
    """
    co = bipartite_coefficients(params, spectrum, k, n1, n2)
    quantities = [-delta * co.lam_k for delta, size in ((co.delta1, n1), (co.delta2, n2))
                  if not (manifold and size == 1)]
    quantities += list(co.a + co.d)
    quantities += list(co.b * co.c - co.a * co.d)
    return _verdict_from_margins(quantities, tol_margin)


def expanded_conditions(co: BipartiteCoefficients) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-``j`` stability inequalities written out in the raw coefficients.

    Both returned arrays must be strictly negative for stability. The first
    is ``a_j + d_j`` divided by the positive factor
    ``2 n1 n2 alpha1^2 / (beta1 beta2)``; the second equals ``b_j c_j - a_j d_j``.
    """
    n1, n2, a1, a2 = co.n1, co.n2, co.alpha1, co.alpha2
    lk, lj = co.lam_k, co.lam_j
    first = (1 + a2 * (n1 ** 2 + n2 ** 2) / (2 * a1 * n1 * n2)) * lj - (1 - a2 ** 2 / a1 ** 2) * lk
    second = (-co.delta1 * co.delta2 * lk ** 2
              + (co.delta2 * n1 * a1 / co.beta1 + co.delta1 * n2 * a1 / co.beta2) * lj * lk
              + n1 * n2 / (co.beta1 * co.beta2) * (a2 ** 2 - a1 ** 2) * lj ** 2)
    return first, second


def verdict_from_abscissa(abscissa: float, tol_margin: float = TOL_MARGIN) -> str:
    return _verdict_from_margins([abscissa], tol_margin)


# --------------------------------------------------------------------------
# Classification and certificates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    equilibrium: float = 1e-7     # max_i ||f_i||_inf accepted as an equilibrium
    align: float = TOL_ALIGN
    cluster: float = TOL_CLUSTER
    polygonal: float = 1e-7       # all ||y_i|| below this => polygonal
    collinear: float = 1e-6       # ||y_i - <x_i,y_i> x_i|| below this => collinear
    rank: float = 1e-6            # relative singular value threshold
    zero_mode: float = TOL_ZERO_MODE
    margin: float = TOL_MARGIN


@dataclass(frozen=True)
class EquilibriumReport:
    cls: str                      # consensus | bipartite | m_clustering | polygonal | near_equilibrium_unclassified
    k: int | None = None
    n1: int | None = None
    n2: int | None = None
    m: int | None = None
    attention_rank: int = 0
    spectral_abscissa: float = float("nan")
    tangent_abscissa: float = float("nan")
    verdict: str = MARGINAL
    residual: float = float("nan")
    notes: tuple[str, ...] = field(default_factory=tuple)


def _influence(system: str, X: NDArray[np.float64], params: ModelParams) -> NDArray[np.float64]:
    if system == "self_attention":
        return influence_vectors(X, params)
    if system == "moja":
        return np.broadcast_to(params.V @ X.mean(axis=0), X.shape).copy()
    if system == "oja":
        return X @ params.V.T
    raise ContractViolation(f"unknown system {system!r}")


def _attention(system: str, X: NDArray[np.float64], params: ModelParams) -> NDArray[np.float64]:
    if system == "self_attention":
        return attention_matrix(X, params)
    n = X.shape[0]
    return np.full((n, n), 1.0 / n) if system == "moja" else np.eye(n)


def _abscissae(system, X, params, exclude_zero: float):
    J = jacobian(system, X, params)
    amb = general_eigenvalues(J).real
    tan = general_eigenvalues(tangent_jacobian(J, X)).real
    if exclude_zero > 0:
        amb = amb[np.abs(amb) >= exclude_zero]
        tan = tan[np.abs(tan) >= exclude_zero]
    top = lambda v: float(v.max()) if v.size else float("-inf")
    return top(amb), top(tan)


def classify_equilibrium(config, params: ModelParams, spectrum: ValueSpectrum | None = None,
                         tols: Tolerances = Tolerances(), system: str = "self_attention") -> EquilibriumReport:
    """Classify an equilibrium and attach attention rank and spectral abscissa.

    Cascade: aligned with one eigenvector and all signs equal -> consensus;
    aligned with mixed signs -> bipartite; all influence vectors vanish ->
    polygonal; every ``y_i`` collinear with ``x_i`` -> m-clustering; otherwise
    unclassified. ``spectral_abscissa`` is taken over the ambient Jacobian;
    ``tangent_abscissa`` over its restriction to the sphere product.

    The verdict is the sign of the tangent abscissa. The two differ only
    through the radial eigenvalues ``-2 <x_i, y_i>``, which describe motion
    off the sphere; a token whose influence points away from it (a singleton
    cluster with ``<x_i, y_i> < 0``) makes the ambient abscissa positive even
    though the flow on the sphere is attracted.
    """
    X = np.asarray(config, dtype=float)
    if spectrum is None:
        spectrum = params.spectrum()
    Y = _influence(system, X, params)
    F = Y - np.einsum("ij,ij->i", X, Y)[:, None] * X
    residual = float(np.max(np.abs(F)))
    if not residual < tols.equilibrium:
        raise ContractViolation(f"state is not an equilibrium (residual {residual:.3e})")

    rank = numerical_rank(_attention(system, X, params), tols.rank)
    k, signs = alignment(X, spectrum, tols.align)
    info: dict = {}
    exclude = 0.0
    if k is not None and np.all(signs == signs[0]):
        info = dict(cls="consensus", k=k, m=1)
    elif k is not None:
        n1 = int(np.count_nonzero(signs > 0))
        info = dict(cls="bipartite", k=k, n1=n1, n2=X.shape[0] - n1, m=2)
    elif np.all(np.linalg.norm(Y, axis=1) < tols.polygonal):
        info = dict(cls="polygonal")
        exclude = tols.zero_mode
    else:
        gam = np.einsum("ij,ij->i", X, Y)
        off = np.linalg.norm(Y - gam[:, None] * X, axis=1)
        if np.all(off < tols.collinear):
            info = dict(cls="m_clustering", m=detect_clusters(X, tols.cluster).m)
        else:
            info = dict(cls="near_equilibrium_unclassified")

    amb, tan = _abscissae(system, X, params, exclude)
    notes = ("zero modes |Re| < %.0e excluded" % exclude,) if exclude else ()
    return EquilibriumReport(attention_rank=rank, spectral_abscissa=amb, tangent_abscissa=tan,
                             verdict=verdict_from_abscissa(tan, tols.margin), residual=residual,
                             notes=notes, **info)


@dataclass(frozen=True)
class ClusteringCertificate:
    gammas: NDArray[np.float64]
    collinearity_residual: float
    singularity_residual: float


def clustering_certificate(config, params: ModelParams) -> ClusteringCertificate:
    """Singularity witness for a clustering equilibrium.

    With ``gamma_i = <x_i, y_i>`` and ``G = diag(1/gamma_i)``, an equilibrium
    satisfies ``M x = 0`` for ``M = I - (G A) kron V``; the smallest singular
    value of ``M`` is returned as ``singularity_residual``.
    """
    X = np.asarray(config, dtype=float)
    A = attention_matrix(X, params)
    Y = influence_vectors(X, params)
    gam = np.einsum("ij,ij->i", X, Y)
    if np.any(np.abs(gam) < 1e-12):
        raise CertificateUnavailable("some gamma_i vanishes; reciprocal undefined")
    collinear = float(np.max(np.linalg.norm(Y - gam[:, None] * X, axis=1)))
    n, d = X.shape
    # (G kron I)(A kron I)(I kron V) = (G A) kron V
    M = np.eye(n * d) - np.kron(A / gam[:, None], params.V)
    return ClusteringCertificate(gam, collinear, smallest_singular_value(M))


@dataclass(frozen=True)
class PolygonalCertificate:
    max_real_part: float
    unstable: bool
    influence_norm: float


def polygonal_certificate(config, params: ModelParams, system: str = "self_attention",
                          tol_zero_mode: float = TOL_ZERO_MODE, tol_margin: float = TOL_MARGIN) -> PolygonalCertificate:
    """Instability witness at a polygonal state (all ``y_i`` vanish).

    Eigenvalues with ``|Re| < tol_zero_mode`` are discarded as directions
    along the equilibrium set.
    """
    X = np.asarray(config, dtype=float)
    Y = _influence(system, X, params)
    re = general_eigenvalues(jacobian(system, X, params)).real
    kept = re[np.abs(re) >= tol_zero_mode]
    top = float(kept.max()) if kept.size else float("-inf")
    return PolygonalCertificate(top, top > tol_margin, float(np.max(np.linalg.norm(Y, axis=1))))


# --------------------------------------------------------------------------
# Constructions
# --------------------------------------------------------------------------

def consensus_state(spectrum: ValueSpectrum, k: int, n: int) -> NDArray[np.float64]:
    return np.tile(spectrum.vector(k), (n, 1))


def bipartite_state(spectrum: ValueSpectrum, k: int, signs) -> NDArray[np.float64]:
    s = np.asarray(signs, dtype=float)
    return s[:, None] * spectrum.vector(k)[None, :]


# --------------------------------------------------------------------------
# Simulation oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationOutcome:
    outcome: str           # returned | escaped | undecided
    time: float
    final_distance: float


def perturbation_outcome(config, params: ModelParams, system: str = "self_attention", *,
                         eps: float = 1e-4, return_tol: float = 1e-6, escape_tol: float = 1e-2,
                         seed: int = 0, h: float | None = None, max_time: float = 2e4) -> PerturbationOutcome:
    """Perturb an equilibrium by tangent noise of size ``eps`` and integrate.

    Distance is ``max_i ||x_i(t) - x_i*||``. The run stops once it drops below
    ``return_tol`` (``"returned"``) or exceeds ``escape_tol`` (``"escaped"``).
    The default step is ``min(0.1, 1 / ||V||_2)``, inside the RK4 stability
    region for the Jacobian magnitudes seen at consensus-type points.
    """
    from attnflow.dynamics import rk4_iter, vector_field
    from attnflow.geometry import _normalize_rows
    from attnflow.rng import SplitMix64

    Xs = np.asarray(config, dtype=float)
    noise = SplitMix64(seed).normal(Xs.shape)
    noise -= np.einsum("ij,ij->i", Xs, noise)[:, None] * Xs
    noise *= eps / np.max(np.linalg.norm(noise, axis=1))
    X0 = _normalize_rows(Xs + noise)
    if h is None:
        h = min(0.1, 1.0 / max(np.linalg.norm(params.V, 2), 1e-12))
    f = vector_field(system, params)
    max_steps = int(max_time / h)
    dist = float("nan")
    for step, X, _ in rk4_iter(f, X0, h):
        dist = float(np.max(np.linalg.norm(X - Xs, axis=1)))
        if dist < return_tol:
            return PerturbationOutcome("returned", step * h, dist)
        if dist > escape_tol:
            return PerturbationOutcome("escaped", step * h, dist)
        if step >= max_steps:
            return PerturbationOutcome("undecided", step * h, dist)
