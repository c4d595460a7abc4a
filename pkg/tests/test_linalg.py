import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from helpers import conditioned, kahan, max_T
from kernelskel.geometry import RandomUniform, far_apart_pair, generate_points
from kernelskel.kernels import InverseDistance, Multiquadric, assemble
from kernelskel.linalg import (FixedRank, Threshold, Tolerance, aca, householder_qr, id_rows,
                               load_matrix, ls_project, save_matrix, srrqr, truncated_svd)


def _check_factors(A, res, rtol=1e-10):
    """R11 and the residual norms agree with the selected columns of A."""
    k = res.rank
    perm = res.perm
    assert sorted(perm.tolist()) == list(range(A.shape[1]))
    Asel = A[:, perm[:k]]
    np.testing.assert_allclose(res.R11.T @ res.R11, Asel.T @ Asel,
                               atol=rtol * max(1.0, np.abs(A).max() ** 2))
    if k < A.shape[1]:
        resid = A[:, perm[k:]] - Asel @ res.T
        np.testing.assert_allclose(np.linalg.norm(resid, axis=0), res.residual_col_norms,
                                   atol=1e-9 * np.linalg.norm(A))


def test_diagonal_fixed_rank():
    A = np.diag([3.0, 2.0, 1.0])
    res = srrqr(A, 2.0, FixedRank(2))
    assert res.perm[:2].tolist() == [0, 1]
    assert max_T(res) == 0.0


def test_all_ones_threshold():
    res = srrqr(np.ones((3, 3)), 2.0, Threshold(1e-10))
    assert res.rank == 1
    assert np.all(res.residual_col_norms <= 1e-10)


@pytest.mark.parametrize("n", [32, 96])
def test_kahan_needs_swaps(n):
    K = kahan(n)
    # plain pivoted QR (LAPACK) keeps the natural order and has a huge T
    _, R, piv = scipy.linalg.qr(K, pivoting=True, mode="economic")
    k = n - 1
    T_plain = np.linalg.solve(R[:k, :k], R[:k, k:])
    assert np.abs(T_plain).max() > 10.0
    res = srrqr(K, 2.0, FixedRank(k))
    assert res.swaps > 0
    assert max_T(res) <= 2.0 * (1 + 1e-8)
    _check_factors(K, res)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        srrqr(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        srrqr(np.eye(2), C=0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.floats(0, 12), st.integers(0, 2 ** 31),
       st.floats(1.0, 4.0))
def test_bound_and_factors_random(m, n, logcond, seed, C):
    A = conditioned(m, n, 10.0 ** logcond, seed)
    k = np.random.default_rng(seed).integers(1, min(m, n) + 1)
    res = srrqr(A, C, FixedRank(int(k)))
    assert res.rank == k
    assert max_T(res) <= C * (1 + 1e-8)
    _check_factors(A, res)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.floats(1e-12, 1e-2), st.integers(0, 2 ** 31))
def test_threshold_mode_meets_eps(m, n, eps, seed):
    A = conditioned(m, n, 1e10, seed)
    res = srrqr(A, 2.0, Threshold(eps))
    assert np.all(res.residual_col_norms <= eps)
    assert max_T(res) <= 2.0 * (1 + 1e-8)
    resid = A[:, res.perm[res.rank:]] - A[:, res.perm[:res.rank]] @ res.T
    assert np.all(np.linalg.norm(resid, axis=0) <= eps * (1 + 1e-6) + 1e-13)


def test_id_rank_one():
    g = np.random.default_rng(1)
    A = np.outer(g.standard_normal(5), g.standard_normal(4))
    res = id_rows(A, 2.0, Threshold(1e-12))
    assert res.rank == 1
    assert np.linalg.norm(A - res.U @ A[res.skeleton], axis=1).max() <= 1e-12


def test_id_identity_keeps_all_rows():
    assert id_rows(np.eye(4), 2.0, Threshold(0.5)).rank == 4


def test_id_structure():
    A = conditioned(30, 50, 1e8, 3)
    res = id_rows(A, 2.0, Threshold(1e-5))
    np.testing.assert_array_equal(res.U[res.skeleton], np.eye(res.rank))
    assert np.abs(res.U).max() <= 2.0 * (1 + 1e-8)
    err = np.linalg.norm(A - res.U @ A[res.skeleton], axis=1)
    np.testing.assert_allclose(err, res.residual_row_norms, atol=1e-12)
    assert err.max() <= 1e-5


def test_id_rank_lower_bound_from_svd():
    pair = far_apart_pair(3)
    X = generate_points(pair.source, RandomUniform(200, 0))
    Y = generate_points(pair.target, RandomUniform(300, 1))
    A = assemble(InverseDistance(), X, Y)
    eps = 1e-6 * np.sqrt(300)
    res = id_rows(A, 2.0, Threshold(eps))
    s = np.linalg.svd(A, compute_uv=False)
    # row errors <= eps give a Frobenius error <= eps*sqrt(200); no rank-k matrix beats the SVD tail
    tail = np.sqrt(np.cumsum((s ** 2)[::-1])[::-1])
    need = int(np.argmax(np.append(tail, 0.0) <= eps * np.sqrt(200)))
    err = np.linalg.norm(A - res.U @ A[res.skeleton], axis=1)
    assert err.max() <= eps
    assert res.rank >= need


def test_householder_qr():
    A = conditioned(20, 12, 1e6, 5)
    Q, R, perm = householder_qr(A, pivoting=True)
    np.testing.assert_allclose(Q @ R, A[:, perm], atol=1e-13)
    np.testing.assert_allclose(Q.T @ Q, np.eye(12), atol=1e-13)
    assert np.all(np.diff(np.abs(np.diag(R))) <= 1e-15)


def test_ls_project_trivial_cases():
    g = np.random.default_rng(0)
    A = g.standard_normal((4, 9))
    np.testing.assert_allclose(ls_project(A, A).U, np.eye(4), atol=1e-12)
    p = ls_project(np.eye(2)[:1], np.eye(2))
    np.testing.assert_allclose(p.U, [[1.0], [0.0]])


def test_ls_project_matches_lstsq_and_is_optimal():
    g = np.random.default_rng(3)
    A = g.standard_normal((30, 50))
    B = A[g.choice(30, 10, replace=False)]
    U = ls_project(B, A).U
    U_ref = np.linalg.lstsq(B.T, A.T, rcond=None)[0].T
    np.testing.assert_allclose(U, U_ref, atol=1e-12)
    best = np.linalg.norm(A - U @ B)
    for _ in range(1000):
        Up = U + 1e-3 * g.standard_normal(U.shape)
        assert best <= np.linalg.norm(A - Up @ B)


def test_ls_project_ill_conditioned_kernel_rows():
    pair = far_apart_pair(3)
    X = generate_points(pair.source, RandomUniform(150, 0)).points
    Y = generate_points(pair.target, RandomUniform(600, 1)).points
    A = assemble(Multiquadric(), X, Y)
    B = A[:60]
    U = ls_project(B, A).U
    U_ref = np.linalg.lstsq(B.T, A.T, rcond=None)[0].T
    r = np.linalg.norm(A - U @ B)
    r_ref = np.linalg.norm(A - U_ref @ B)
    assert r <= 1.01 * r_ref + 1e-12


def test_ls_project_deficient_min_norm():
    g = np.random.default_rng(4)
    B = g.standard_normal((5, 40))
    B[3] = B[1] + B[2]
    A = g.standard_normal((7, 40))
    p = ls_project(B, A)
    assert p.deficient and p.rank == 4
    np.testing.assert_allclose(p.U, np.linalg.lstsq(B.T, A.T, rcond=None)[0].T, atol=1e-12)


def test_truncated_svd():
    s = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
    E = np.diag([3.0, 2.0, 1.0]) - s.matrix()
    assert np.linalg.norm(E) == pytest.approx(1.0)
    assert np.linalg.norm(E, 2) == pytest.approx(1.0)
    g = np.random.default_rng(0)
    A = np.outer(g.standard_normal(6), g.standard_normal(8))
    assert np.linalg.norm(A - truncated_svd(A, 1).matrix()) <= 1e-13 * np.linalg.norm(A)


def test_svd_beats_id_at_equal_rank():
    g = np.random.default_rng(5)
    X = g.uniform(-1, 1, (40, 2))
    Y = g.uniform(3, 9, (60, 2))
    A = assemble(Multiquadric(), X, Y)
    for r in (2, 5, 10):
        e_svd = np.linalg.norm(A - truncated_svd(A, r).matrix())
        res = id_rows(A, 2.0, FixedRank(r))
        e_id = np.linalg.norm(A - res.U @ A[res.skeleton])
        assert e_svd <= e_id * (1 + 1e-12)


def _oracles(A):
    return (lambda i: A[i].copy()), (lambda j: A[:, j].copy())


def test_aca_rank_one_and_diagonal():
    g = np.random.default_rng(6)
    A = np.outer(g.standard_normal(7) + 3, g.standard_normal(5) + 3)
    res = aca(*_oracles(A), A.shape, Tolerance(1e-14))
    assert res.rank == 1
    np.testing.assert_allclose(res.matrix(), A, atol=1e-12)
    D = np.eye(2)
    res = aca(*_oracles(D), D.shape, FixedRank(2))
    assert res.rank == 2 and res.row_pivots == [0, 1] and res.col_pivots == [0, 1]
    np.testing.assert_allclose(res.matrix(), D)


def test_aca_zero_pivot_flag():
    A = np.zeros((3, 3))
    A[0, 0] = 1.0
    res = aca(*_oracles(A), A.shape, FixedRank(3))
    assert res.rank == 1 and res.zero_pivot


def test_aca_close_to_svd_on_kernel_block():
    pair = far_apart_pair(3)
    X = generate_points(pair.source, RandomUniform(500, 0))
    Y = generate_points(pair.target, RandomUniform(800, 1))
    A = assemble(InverseDistance(), X, Y)
    k = id_rows(A, 2.0, Threshold(1e-6 * np.sqrt(800))).rank
    res = aca(*_oracles(A), A.shape, FixedRank(k))
    e_aca = np.linalg.norm(A - res.matrix()) / np.sqrt(A.size)
    e_svd = np.linalg.norm(A - truncated_svd(A, k).matrix()) / np.sqrt(A.size)
    assert e_aca <= 100 * e_svd


def test_matrix_file_roundtrip(tmp_path):
    A = np.random.default_rng(7).standard_normal((13, 4))
    save_matrix(tmp_path / "a.bin", A)
    np.testing.assert_array_equal(load_matrix(tmp_path / "a.bin"), A)
    (tmp_path / "bad.bin").write_bytes(b"nope" * 8)
    with pytest.raises(ValueError):
        load_matrix(tmp_path / "bad.bin")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 12))
def test_aca_interpolates_pivots(seed, r):
    g = np.random.default_rng(seed)
    A = assemble(Multiquadric(), g.uniform(-1, 1, (30, 2)), g.uniform(3, 9, (40, 2)))
    res = aca(*_oracles(A), A.shape, FixedRank(r))
    E = A - res.matrix()
    scale = np.abs(A).max()
    assert np.abs(E[res.row_pivots]).max() <= 1e-12 * scale
    assert np.abs(E[:, res.col_pivots]).max() <= 1e-12 * scale


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_rank_monotone_in_eps(seed):
    A = conditioned(25, 35, 1e12, seed)
    ranks = [id_rows(A, 2.0, Threshold(eps)).rank for eps in np.logspace(-13, -1, 13)]
    assert all(a >= b for a, b in zip(ranks, ranks[1:]))
