import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from attnflow.errors import ContractViolation
from attnflow.linalg import (general_eigenvalues, match_multisets, numerical_rank,
                             smallest_singular_value, symmetric_eigen)


def test_symmetric_eigen_diagonal():
    sp = symmetric_eigen(np.diag([2.0, 1.0, -3.0]))
    np.testing.assert_array_equal(sp.eigenvalues, [2, 1, -3])
    np.testing.assert_allclose(np.abs(sp.eigenvectors), np.eye(3), atol=1e-15)


def test_symmetric_eigen_swap_matrix():
    sp = symmetric_eigen([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(sp.eigenvalues, [1, -1], atol=1e-15)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(sp.vector(1), [r, r], atol=1e-15)
    np.testing.assert_allclose(sp.vector(2), [r, -r], atol=1e-15)


def test_symmetric_eigen_reconstruction(rng):
    M = rng.standard_normal((6, 6))
    M = (M + M.T) / 2
    sp = symmetric_eigen(M)
    R = sum(l * np.outer(v, v) for l, v in zip(sp.eigenvalues, sp.eigenvectors.T))
    assert np.max(np.abs(R - M)) < 1e-10


def test_sign_convention_first_nonzero_positive(rng):
    M = rng.standard_normal((5, 5))
    sp = symmetric_eigen(M + M.T)
    for k in range(5):
        v = sp.eigenvectors[:, k]
        assert v[np.flatnonzero(np.abs(v) > 1e-14)[0]] > 0


def test_symmetric_eigen_rejects_bad_input():
    with pytest.raises(ContractViolation):
        symmetric_eigen([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ContractViolation):
        symmetric_eigen(np.ones((2, 3)))


def test_general_eigenvalues_examples():
    np.testing.assert_allclose(general_eigenvalues(np.eye(3)), [1, 1, 1])
    ev = general_eigenvalues([[0.0, -1.0], [1.0, 0.0]])
    np.testing.assert_allclose(ev, [1j, -1j], atol=1e-15)
    # companion matrix of z^3 - 1; oracle: numpy polynomial roots
    C = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    m = match_multisets(general_eigenvalues(C), np.roots([1, 0, 0, -1]))
    assert m.within(1e-10)


def test_general_eigenvalues_sort_order(rng):
    ev = general_eigenvalues(rng.standard_normal((8, 8)))
    keys = [(z.real, z.imag) for z in ev]
    assert keys == sorted(keys, reverse=True)


def test_numerical_rank_examples():
    assert numerical_rank(np.full((5, 5), 0.2), 1e-8) == 1
    assert numerical_rank(np.zeros((4, 4)), 1e-8) == 0
    # two-group attention pattern with distinct weights
    a1, a2 = np.exp(0.7), np.exp(-0.7)
    n1, n2 = 3, 2
    b1, b2 = n1 * a1 + n2 * a2, n1 * a2 + n2 * a1
    A = np.block([[np.full((n1, n1), a1 / b1), np.full((n1, n2), a2 / b1)],
                  [np.full((n2, n1), a2 / b2), np.full((n2, n2), a1 / b2)]])
    assert numerical_rank(A, 1e-8) == 2


def test_smallest_singular_value_examples(rng):
    assert smallest_singular_value(np.eye(4)) == pytest.approx(1.0)
    M = rng.standard_normal((4, 4))
    M[2] = M[0]
    assert smallest_singular_value(M) < 1e-12
    R = rng.standard_normal((5, 5))
    s = np.linalg.svd(R, compute_uv=False)
    # determinant by LU (numpy det) as oracle
    assert abs(abs(np.linalg.det(R)) - np.prod(s)) < 1e-8 * abs(np.linalg.det(R))
    assert smallest_singular_value(R) == pytest.approx(s.min(), rel=1e-12)


def test_match_multisets_reports_worst_pair():
    m = match_multisets([1.0, 2.0, 3.0], [3.0, 1.0, 2.5])
    assert m.max_error == pytest.approx(0.5)
    assert set(m.worst_pair) == {2.0, 2.5}


sym_mats = st.integers(2, 12).flatmap(
    lambda d: arrays(np.float64, (d, d), elements=st.floats(-10, 10, allow_nan=False)))


@settings(max_examples=60, deadline=None)
@given(sym_mats)
def test_property_reconstruction_and_orthonormality(M):
    V = (M + M.T) / 2
    sp = symmetric_eigen(V)
    E = sp.eigenvectors
    scale = max(1.0, np.max(np.abs(V)))
    assert np.max(np.abs(E @ np.diag(sp.eigenvalues) @ E.T - V)) < 1e-10 * scale
    assert np.max(np.abs(E.T @ E - np.eye(len(V)))) < 1e-10
    assert np.all(np.diff(sp.eigenvalues) <= 0)


@settings(max_examples=60, deadline=None)
@given(sym_mats)
def test_property_general_matches_symmetric(M):
    V = (M + M.T) / 2
    scale = max(1.0, np.max(np.abs(V)))
    m = match_multisets(general_eigenvalues(V), symmetric_eigen(V).eigenvalues)
    assert m.max_error < 1e-8 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.integers(0, 6))
def test_property_rank_permutation_invariant(seed, n, r):
    g = np.random.default_rng(seed)
    M = g.standard_normal((n, min(r, n))) @ g.standard_normal((min(r, n), n))
    P, S = g.permutation(n), g.permutation(n)
    assert numerical_rank(M[P][:, S], 1e-8) == numerical_rank(M, 1e-8)
