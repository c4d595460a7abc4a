import numpy as np
import pytest

from conftest import SMALL_ID
from kernelskel.proxy import Random
from kernelskel.geometry import Box
from kernelskel.kernels import InverseDistance, Multiquadric
from kernelskel.h2 import (MB, audit, build_h2, build_tree, dense_matrix, interaction_pairs,
                           level_domain_pair, matvec, uniform_cloud)

K1, K2 = InverseDistance(), Multiquadric()


def test_small_cloud_is_root_leaf():
    pts, box = uniform_cloud(100, 2)
    t = build_tree(pts, 300, box)
    assert t.depth == 1 and t.nodes[0].is_leaf and t.nodes[0].size == 100


def test_quadrant_centers():
    P = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    t = build_tree(P, 1, Box((0.0, 0.0), (1.0, 1.0)))
    assert t.depth == 2
    assert len(t.leaves()) == 4 and all(t.nodes[i].size == 1 for i in t.leaves())


def test_tree_5000():
    pts, box = uniform_cloud(5000, 2, seed=1)
    t = build_tree(pts, 300, box)
    assert 3 <= t.leaf_level <= 4
    assert max(t.nodes[i].size for i in t.leaves()) <= 300
    assert sorted(t.perm.tolist()) == list(range(5000))
    np.testing.assert_array_equal(t.points, pts.points[t.perm])
    for nd in t.nodes:
        assert nd.box.contains(t.points[nd.start:nd.end]).all()
        if not nd.is_leaf:
            kids = [t.nodes[c] for c in nd.children]
            assert kids[0].start == nd.start and kids[-1].end == nd.end
            assert all(a.end == b.start for a, b in zip(kids, kids[1:]))


def test_tree_errors():
    with pytest.raises(ValueError):
        build_tree(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        build_tree(np.zeros((5, 2)), leaf_cap=2)
    with pytest.raises(ValueError):
        build_tree(np.array([[2.0, 2.0]]), 1, Box((0.0, 0.0), (1.0, 1.0)))


def test_level_domain_pair():
    assert level_domain_pair(1, 8.0, 2, "strong").is_empty
    p = level_domain_pair(2, 8.0, 2, "strong")
    assert p.source == Box.cube(1.0, 2)
    assert p.target.outer == Box.cube(7.0, 2) and p.target.inner == Box.cube(3.0, 2)
    w = level_domain_pair(2, 8.0, 2, "weak")
    assert w.target.outer == Box.cube(7.0, 2) and w.target.inner == Box.cube(1.0, 2)
    with pytest.raises(ValueError):
        level_domain_pair(0, 8.0, 2)


@pytest.mark.parametrize("kind", ["strong", "weak"])
@pytest.mark.parametrize("n,cap", [(2000, 40), (700, 30), (300, 300)])
def test_tiling_completeness(kind, n, cap):
    pts, box = uniform_cloud(n, 2, seed=3)
    t = build_tree(pts, cap, box)
    coupled, dense = interaction_pairs(t, kind)
    cover = np.zeros((n, n), dtype=np.int32)

    def mark(i, j):
        a, b = t.nodes[i], t.nodes[j]
        cover[a.start:a.end, b.start:b.end] += 1
        if i != j:
            cover[b.start:b.end, a.start:a.end] += 1

    for pairs in coupled.values():
        for i, j in pairs:
            mark(i, j)
    for i, j in dense:
        mark(i, j)
    assert np.all(cover == 1)


@pytest.fixture(scope="module")
def h2_k2():
    pts, box = uniform_cloud(5000, 2, seed=0)
    t = build_tree(pts, 300, box)
    return pts, build_h2(K2, t, SMALL_ID, tau=1e-6)


def test_nestedness(h2_k2):
    _, H = h2_k2
    for nd in H.tree.nodes:
        if nd.children and H.W[nd.id] is not None:
            kids = np.concatenate([H.skel[c] for c in nd.children])
            assert np.isin(H.skel[nd.id], kids).all()


def test_one_selection_per_level(h2_k2):
    _, H = h2_k2
    assert H.stats.proxy_selections == len(H.stats.level_proxy_sizes)
    assert H.stats.proxy_cache_hits > 0


def test_matvec_against_dense(h2_k2):
    pts, H = h2_k2
    A = dense_matrix(K2, pts)
    g = np.random.default_rng(0)
    V = g.standard_normal((5000, 10))
    ref = A @ V
    out = matvec(H, V)
    rel = np.linalg.norm(out - ref, axis=0) / np.linalg.norm(ref, axis=0)
    assert rel.max() <= 1e-5
    np.testing.assert_allclose(H.matvec(V[:, 0]), out[:, 0], rtol=1e-13, atol=1e-10)
    assert np.all(matvec(H, np.zeros(5000)) == 0.0)
    with pytest.raises(ValueError):
        matvec(H, np.ones(4999))


def test_audit_and_sampling(h2_k2):
    _, H = h2_k2
    E = audit(H).E
    assert not H.stats.E_sampled and 0 < E <= 5e-6
    Es = audit(H, sample_budget=2e6, seed=1).E
    assert H.stats.E_sampled
    assert E / 2 <= Es <= 2 * E
    s = H.stats
    assert s.S_total < s.S_N
    assert s.S_total == pytest.approx(s.S_inadm + s.S_coupling + s.S_basis)


@pytest.mark.parametrize("kind", ["strong", "weak"])
def test_small_matvec_oracle(kind):
    pts, box = uniform_cloud(1500, 2, seed=5)
    t = build_tree(pts, 60, box)
    k = K2
    H = build_h2(k, t, SMALL_ID, tau=1e-6, kind=kind)
    v = np.random.default_rng(1).standard_normal(1500)
    ref = dense_matrix(k, pts) @ v
    assert np.linalg.norm(matvec(H, v) - ref) <= 1e-5 * np.linalg.norm(ref)


def test_single_dense_block():
    pts, box = uniform_cloud(200, 2, seed=2)
    H = build_h2(K1, build_tree(pts, 300, box))
    s = audit(H)
    assert s.E == 0.0
    assert s.S_total == pytest.approx(8 * 200 ** 2 / MB)
    assert s.S_N == pytest.approx(8 * 200 ** 2 / MB)
    v = np.random.default_rng(0).standard_normal(200)
    np.testing.assert_allclose(matvec(H, v), dense_matrix(K1, pts) @ v, rtol=1e-12)


def test_refusals():
    pts, box = uniform_cloud(1000, 2)
    t = build_tree(pts, 100, box)
    with pytest.raises(ValueError, match="hybrid"):
        build_h2(K1, t, SMALL_ID, kind="weak", mode="proxy")
    with pytest.raises(ValueError, match="weak"):
        build_h2(K2, t, SMALL_ID, kind="strong", mode="hybrid")
    with pytest.raises(ValueError):
        build_h2(K2, t, SMALL_ID, threshold_scale="median")


def test_direct_and_hybrid_modes():
    pts, box = uniform_cloud(1500, 2, seed=7)
    t = build_tree(pts, 60, box)
    A = dense_matrix(K1, pts)
    v = np.random.default_rng(2).standard_normal(1500)
    ref = A @ v
    for kind, mode in (("strong", "srrqr"), ("weak", "hybrid"), ("weak", "srrqr")):
        H = build_h2(K1, t, SMALL_ID, tau=1e-6, kind=kind, mode=mode)
        assert audit(H).E <= 1e-5
        assert np.linalg.norm(matvec(H, v) - ref) <= 1e-5 * np.linalg.norm(ref)


def test_3d_build():
    # 3D level pairs need ~900 ID proxies; random proxies keep this test quick
    pts, box = uniform_cloud(3000, 3, seed=0)
    t = build_tree(pts, 100, box)
    H = build_h2(K2, t, Random(3000), tau=1e-6)
    v = np.random.default_rng(3).standard_normal(3000)
    ref = dense_matrix(K2, pts) @ v
    assert np.linalg.norm(matvec(H, v) - ref) <= 1e-5 * np.linalg.norm(ref)
