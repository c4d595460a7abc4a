import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SMALL_ID
from kernelskel.compress import (MembershipWarning, compress_hybrid, compress_proxy,
                                 default_threshold, diagnostics, evaluate_approx, refine_weights)
from kernelskel.geometry import (Box, DomainPair, GridApprox, RandomUniform,
                                 ShellRegion, far_apart_pair, generate_points, nearby_pair)
from kernelskel.kernels import InverseDistance, Multiquadric, assemble, make_degenerate
from kernelskel.linalg import FixedRank
from kernelskel.proxy import Random, default_near_band, select_proxy, select_proxy_id

K1, K2 = InverseDistance(), Multiquadric()
PAIR = far_apart_pair(2)


@pytest.fixture(scope="module")
def k1_proxy():
    return select_proxy_id(K1, PAIR, SMALL_ID)


@pytest.fixture(scope="module")
def X0():
    return generate_points(PAIR.source, RandomUniform(300, 0))


def test_degenerate_rank_one(X0):
    k = make_degenerate(PAIR, 1, seed=0)
    proxy = select_proxy_id(k, PAIR, SMALL_ID)
    res = compress_proxy(k, X0, proxy)
    assert res.rank == 1
    E = assemble(k, X0, proxy.points) - evaluate_approx(res, k, X0, proxy.points)
    assert np.abs(E).max() <= 1e-13 * np.abs(assemble(k, X0, proxy.points)).max()


@pytest.mark.parametrize("r", [1, 7, 40, 500])
def test_fixed_rank_exact(k1_proxy, X0, r):
    res = compress_proxy(K1, X0, k1_proxy, FixedRank(r))
    assert res.rank == min(r, len(X0))
    np.testing.assert_array_equal(res.W[res.x_rep], np.eye(res.rank))


def test_threshold_guarantee_at_proxies(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    eps = default_threshold(len(k1_proxy))
    assert res.epsilon == eps
    E = assemble(K1, X0, k1_proxy.points) - evaluate_approx(res, K1, X0, k1_proxy.points)
    assert np.linalg.norm(E, axis=1).max() <= eps
    assert np.abs(res.W).max() <= 2.0 * (1 + 1e-8)


def test_single_proxy_target_column(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    y = k1_proxy.points.points[5:6]
    full = assemble(K1, X0, k1_proxy.points) - evaluate_approx(res, K1, X0, k1_proxy.points)
    one = assemble(K1, X0, y) - evaluate_approx(res, K1, X0, y)
    np.testing.assert_allclose(one[:, 0], full[:, 5], atol=1e-15)


def test_skeleton_rows_exact(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    Y0 = generate_points(PAIR.target, RandomUniform(2000, 3))
    A = assemble(K1, X0, Y0)
    E = A - evaluate_approx(res, K1, X0, Y0)
    assert np.abs(E[res.x_rep]).max() <= 1e-13 * np.abs(A).max()


def test_factors_mode(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    Y0 = generate_points(PAIR.target, RandomUniform(100, 3))
    W, Kr = evaluate_approx(res, K1, X0, Y0, factors=True)
    assert Kr.shape == (res.rank, 100)
    np.testing.assert_array_equal(W @ Kr, evaluate_approx(res, K1, X0, Y0))


def test_membership_warning(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    with pytest.warns(MembershipWarning):
        evaluate_approx(res, K1, X0, np.array([[2.0, 0.0], [5.0, 5.0]]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        evaluate_approx(res, K1, X0, np.array([[2.0, 0.0]]), check=False)


def test_refine_weights_not_worse(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    for Y0 in (k1_proxy.points, generate_points(PAIR.target, RandomUniform(3000, 4))):
        A = assemble(K1, X0, Y0)
        before = np.linalg.norm(A - evaluate_approx(res, K1, X0, Y0), axis=1)
        ref = refine_weights(res, K1, X0, Y0)
        after = np.linalg.norm(A - evaluate_approx(ref, K1, X0, Y0), axis=1)
        assert np.all(after <= before * (1 + 1e-6) + 1e-14)
        assert np.linalg.norm(after) < np.linalg.norm(before)
        assert not ref.deficient
        np.testing.assert_array_equal(ref.x_rep, res.x_rep)


def test_refine_weights_deficient_flag(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy, FixedRank(3))
    Y0 = np.repeat([[5.0, 5.0]], 4, axis=0)
    assert refine_weights(res, K1, X0, Y0).deficient
    with pytest.raises(ValueError):
        refine_weights(res, K1, X0, Y0[:2])


def test_input_errors(k1_proxy):
    with pytest.raises(ValueError, match="empty"):
        compress_proxy(K1, np.zeros((0, 2)), k1_proxy)
    with pytest.raises(ValueError, match="outside"):
        compress_proxy(K1, np.array([[0.0, 0.0], [2.0, 0.0]]), k1_proxy)


def test_rank_independent_of_targets(k1_proxy, X0):
    a = compress_proxy(K1, X0, k1_proxy)
    evaluate_approx(a, K1, X0, generate_points(PAIR.target, RandomUniform(500, 9)))
    b = compress_proxy(K1, X0, k1_proxy)
    np.testing.assert_array_equal(a.x_rep, b.x_rep)
    np.testing.assert_array_equal(a.W, b.W)


def test_hybrid_far_only_matches_proxy(k1_proxy, X0):
    near = ShellRegion(Box.cube(2.0, 2), PAIR.source)
    Y0 = generate_points(PAIR.target, RandomUniform(400, 2))
    assert not near.contains(Y0.points).any()
    eps = default_threshold(len(k1_proxy))
    h, split = compress_hybrid(K1, X0, Y0, near, k1_proxy, eps=eps)
    p = compress_proxy(K1, X0, k1_proxy)
    assert len(split.near) == 0 and len(split.far) == 400
    np.testing.assert_array_equal(h.x_rep, p.x_rep)
    np.testing.assert_array_equal(h.W, p.W)


def test_hybrid_near_part_exact_control():
    pair = nearby_pair(2)
    band = default_near_band(pair)
    near = ShellRegion(band, pair.target.inner)
    far_pair = DomainPair(pair.source, ShellRegion(pair.target.outer, band), "weak")
    proxy = select_proxy_id(K1, far_pair, SMALL_ID)
    X0 = generate_points(pair.source, RandomUniform(300, 0))
    Y0 = generate_points(near, RandomUniform(200, 1))
    res, split = compress_hybrid(K1, X0, Y0, near, proxy)
    assert len(split.near) == 200
    E = assemble(K1, X0, Y0) - evaluate_approx(res, K1, X0, Y0, check=False)
    assert np.linalg.norm(E, axis=1).max() <= res.epsilon


def test_hybrid_not_worse_than_proxy_on_weak_k2():
    pair = nearby_pair(2)
    weak = DomainPair(pair.source, ShellRegion(pair.target.outer, pair.target.inner), "weak")
    band = default_near_band(pair)
    near = ShellRegion(band, pair.target.inner)
    far_pair = DomainPair(pair.source, ShellRegion(pair.target.outer, band), "weak")
    X0 = generate_points(pair.source, RandomUniform(400, 0))
    Y0 = generate_points(weak.target, RandomUniform(4000, 1))
    A = assemble(K2, X0, Y0)
    h, _ = compress_hybrid(K2, X0, Y0, near, select_proxy_id(K2, far_pair, SMALL_ID))
    p = compress_proxy(K2, X0, select_proxy_id(K2, weak, SMALL_ID), FixedRank(h.rank))
    eh = np.linalg.norm(A - evaluate_approx(h, K2, X0, Y0, check=False))
    ep = np.linalg.norm(A - evaluate_approx(p, K2, X0, Y0))
    assert eh <= 1.1 * ep


def test_diagnostics_degenerate_exact():
    k = make_degenerate(PAIR, 6, seed=2)
    proxy = select_proxy_id(k, PAIR, SMALL_ID)
    X0 = generate_points(PAIR.source, RandomUniform(200, 0))
    res = compress_proxy(k, X0, proxy, FixedRank(3))
    probe = generate_points(PAIR.target, GridApprox(2000))
    rep = diagnostics(k, X0, res, probe)
    scale = np.abs(assemble(k, X0, probe)).max()
    assert rep.representation_deviation <= 1e-10 * scale
    # error transfer bound with the measured norm of S
    assert np.all(rep.err_Y0 <= rep.err_Yp * rep.s_norm_max * np.sqrt(len(probe)) * (1 + 1e-6)
                  + 1e-12 * scale)


def test_diagnostics_ratio_bound(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    rep = diagnostics(K1, X0, res, generate_points(PAIR.target, GridApprox(10000)))
    ok = ~np.isnan(rep.ratio_max)
    assert np.all(np.isnan(rep.ratio_max[res.x_rep]))
    assert rep.ratio_max[ok].max() <= len(k1_proxy) * 2.0
    assert np.all(rep.err_Yp >= 0) and np.all(rep.err_Y0 >= 0)
    assert rep.representation_deviation <= 1e-8


def test_diagnostics_needs_enough_xp(k1_proxy, X0):
    res = compress_proxy(K1, X0, k1_proxy)
    with pytest.raises(ValueError, match="Xp"):
        diagnostics(K1, X0, res, k1_proxy.points, Xp=X0[:10])
    with pytest.raises(ValueError):
        diagnostics(K1, X0, res.__class__(res.x_rep, res.W, None, None), k1_proxy.points)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-10, 1e-3))
def test_threshold_guarantee_random_sources(seed, tol):
    proxy = select_proxy(K2, PAIR, Random(300, seed))
    X = generate_points(PAIR.source, RandomUniform(150, seed))
    res = compress_proxy(K2, X, proxy, tol=tol)
    E = assemble(K2, X, proxy.points) - evaluate_approx(res, K2, X, proxy.points)
    assert np.linalg.norm(E, axis=1).max() <= default_threshold(300, tol)
