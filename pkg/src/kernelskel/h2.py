"""H² matrices for K(X, X) built from per-level proxy compressions.

The points are partitioned by a uniform 2^d-tree. Every cluster i gets a
skeleton s_i and weights W_i with K(X_i, far) ~ W_i K(s_i, far); a non-leaf
cluster compresses the union of its children's skeletons, so the bases are
nested. An admissible block is stored as the small coupling K(s_i, s_j) and
inadmissible leaf blocks are stored densely. All clusters at one level share
a single proxy set, translated to each cluster's center.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Admissibility, Box, DomainPair, PointSet, ShellRegion, rng
from .kernels import Kernel, assemble, assemble_self
from .linalg import Threshold, id_rows
from .proxy import IdSelectParams, ProxyCache

MB = 2.0 ** 20
MAX_DEPTH = 30


class Mode(str, Enum):
    PROXY = "proxy"
    HYBRID = "hybrid"
    DIRECT = "srrqr"


# ------------------------------------------------------------------- the tree

@dataclass
class Node:
    id: int
    level: int
    coords: tuple
    box: Box
    start: int
    end: int
    parent: int | None = None
    children: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.end - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class PartitionTree:
    """Uniform tree; ``points`` are stored permuted so nodes own contiguous ranges.

    ``perm[p]`` is the original index of permuted point p.
    """

    root_box: Box
    points: np.ndarray
    perm: np.ndarray
    nodes: list
    levels: list
    leaf_cap: int
    index: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def depth(self) -> int:
        """Number of levels, root included."""
        return len(self.levels)

    @property
    def leaf_level(self) -> int:
        return len(self.levels) - 1

    @property
    def L(self) -> float:
        return self.root_box.diam

    def leaves(self) -> list:
        return self.levels[-1]

    def node_at(self, level: int, coords: tuple):
        return self.index[level].get(coords)

    def neighbors(self, i: int) -> list:
        """Same-level nodes whose boxes touch node i's box, node i included."""
        nd = self.nodes[i]
        out = []
        for off in np.ndindex(*([3] * self.dim)):
            c = tuple(a + b - 1 for a, b in zip(nd.coords, off))
            j = self.node_at(nd.level, c)
            if j is not None:
                out.append(j)
        return out


def _morton(cells: np.ndarray, depth: int) -> np.ndarray:
    d = cells.shape[1]
    code = np.zeros(cells.shape[0], dtype=np.uint64)
    for b in range(depth - 1, -1, -1):
        for a in range(d):
            code = (code << np.uint64(1)) | ((cells[:, a] >> b) & 1).astype(np.uint64)
    return code


def build_tree(points, leaf_cap: int = 300, root_box: Box | None = None) -> PartitionTree:
    """Uniform 2^d subdivision of ``root_box`` until every box has <= leaf_cap points.

    All leaves sit on the same level; empty boxes are pruned. The default root
    box is the smallest cube containing the points.
    """
    P = points.points if isinstance(points, PointSet) else np.atleast_2d(np.asarray(points, float))
    n, d = P.shape
    if n == 0:
        raise ValueError("empty point set")
    if leaf_cap < 1:
        raise ValueError("leaf_cap must be at least 1")
    if root_box is None:
        lo, hi = P.min(axis=0), P.max(axis=0)
        edge = max(float((hi - lo).max()), 1e-300)
        root_box = Box(tuple(lo), tuple(lo + edge))
    elif not np.all(root_box.contains(P)):
        raise ValueError("points outside the root box")
    lo = np.array(root_box.lo)
    edges = root_box.edges
    rel = (P - lo) / edges
    depth = 0
    while True:
        m = 1 << depth
        cells = np.clip(np.floor(rel * m).astype(np.int64), 0, m - 1)
        _, counts = np.unique(cells, axis=0, return_counts=True)
        if counts.max() <= leaf_cap:
            break
        depth += 1
        if depth > MAX_DEPTH:
            raise ValueError("cannot separate points: too many coincident points for leaf_cap")
    code = _morton(cells, depth)
    order = np.lexsort((np.arange(n), code))
    cells = cells[order]
    nodes: list[Node] = []
    levels: list[list[int]] = []
    index: list[dict] = []
    for lev in range(depth + 1):
        shift = depth - lev
        c = cells >> shift
        # contiguous runs of equal cell coordinates are the nodes of this level
        brk = np.flatnonzero(np.any(np.diff(c, axis=0) != 0, axis=1)) + 1
        starts = np.r_[0, brk]
        ends = np.r_[brk, n]
        ids = []
        lookup = {}
        w = edges / (1 << lev)
        for s, e in zip(starts, ends):
            key = tuple(int(v) for v in c[s])
            blo = lo + np.array(key) * w
            nd = Node(len(nodes), lev, key, Box(tuple(blo), tuple(blo + w)), int(s), int(e))
            if lev > 0:
                pkey = tuple(v >> 1 for v in key)
                nd.parent = index[lev - 1][pkey]
                nodes[nd.parent].children.append(nd.id)
            nodes.append(nd)
            ids.append(nd.id)
            lookup[key] = nd.id
        levels.append(ids)
        index.append(lookup)
    return PartitionTree(root_box, P[order].copy(), order, nodes, levels, leaf_cap, index)


def level_domain_pair(level: int, L: float, dim: int, kind="strong") -> DomainPair:
    """The canonical pair shared (up to translation) by all clusters at ``level``.

    ``X = [-h, h]^d`` with h = L / 2^(level+1); the far field is
    ``[-(L-h), L-h]^d`` minus ``[-3h, 3h]^d`` (strong) or minus X (weak). At
    level 1 the strong far field is empty.
    """
    if level < 1:
        raise ValueError("level must be at least 1 (the root has no admissible pairs)")
    kind = Admissibility(kind)
    h = L / 2.0 ** (level + 1)
    src = Box.cube(h, dim)
    outer = Box.cube(L - h, dim)
    inner = Box.cube(min(3.0 * h, L - h), dim) if kind is Admissibility.STRONG else src
    return DomainPair(src, ShellRegion(outer, inner), kind)


# ------------------------------------------------------------------ the matrix

@dataclass
class BuildStats:
    """Storage in MB (8 bytes per real).

    ``S_inadm``, ``S_coupling`` and ``S_total`` count every ordered block, as if
    the symmetric matrix were stored in full; ``S_stored`` is what is actually
    kept (upper-triangular blocks only).
    """

    N: int
    S_N: float = 0.0
    S_inadm: float = 0.0
    S_coupling: float = 0.0
    S_basis: float = 0.0
    S_total: float = 0.0
    S_stored: float = 0.0
    E: float | None = None
    E_sampled: bool = False
    level_ranks: dict = field(default_factory=dict)
    level_proxy_sizes: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    proxy_selections: int = 0
    proxy_cache_hits: int = 0

    @property
    def build_seconds(self) -> float:
        return self.seconds.get("total", 0.0)


@dataclass
class H2Matrix:
    tree: PartitionTree
    kernel: Kernel
    kind: Admissibility
    skel: dict
    W: dict
    coupling: dict
    dense: dict
    stats: BuildStats

    @property
    def n(self) -> int:
        return self.tree.n

    def candidates(self, i: int) -> np.ndarray:
        """Permuted indices whose span node i's weights act on."""
        nd = self.tree.nodes[i]
        if nd.is_leaf:
            return np.arange(nd.start, nd.end)
        return np.concatenate([self.skel[c] for c in nd.children])

    def basis(self, i: int) -> np.ndarray:
        """Explicit U_i with K(X_i, far) ~ U_i K(s_i, far); rows follow node i's range."""
        nd = self.tree.nodes[i]
        W = self.W[i]
        if nd.is_leaf:
            return W if W is not None else np.eye(nd.size)
        parts = [self.basis(c) for c in nd.children]
        rows = sum(p.shape[0] for p in parts)
        cols = sum(p.shape[1] for p in parts)
        B = np.zeros((rows, cols))
        r = c0 = 0
        for p in parts:
            B[r:r + p.shape[0], c0:c0 + p.shape[1]] = p
            r += p.shape[0]
            c0 += p.shape[1]
        return B if W is None else B @ W

    def matvec(self, v) -> np.ndarray:
        return matvec(self, v)


def _interactions(tree: PartitionTree, kind: Admissibility):
    """Admissible node pairs (i < j) per level, and inadmissible leaf pairs (i <= j)."""
    coupled: dict[int, list] = {}
    for lev in range(1, tree.depth):
        pairs = []
        for i in tree.levels[lev]:
            nd = tree.nodes[i]
            if kind is Admissibility.WEAK:
                cands = tree.nodes[nd.parent].children
                pairs.extend((i, j) for j in cands if j > i)
            else:
                near = set(tree.neighbors(i))
                for q in tree.neighbors(nd.parent):
                    pairs.extend((i, j) for j in tree.nodes[q].children
                                 if j > i and j not in near)
        coupled[lev] = sorted(pairs)
    leaves = tree.leaves()
    if kind is Admissibility.WEAK:
        dense = [(i, i) for i in leaves]
    else:
        dense = sorted((i, j) for i in leaves for j in tree.neighbors(i) if j >= i)
    return coupled, dense


def interaction_pairs(tree: PartitionTree, kind="strong"):
    return _interactions(tree, Admissibility(kind))


def _far_points(tree: PartitionTree, i: int, kind: Admissibility) -> np.ndarray:
    """Permuted indices of all points outside node i's near field."""
    excl = tree.neighbors(i) if kind is Admissibility.STRONG else [i]
    mask = np.ones(tree.n, dtype=bool)
    for j in excl:
        mask[tree.nodes[j].start:tree.nodes[j].end] = False
    return np.flatnonzero(mask)


def build_h2(k: Kernel, tree: PartitionTree, scheme=None, tau: float = 1e-6, C: float = 2.0,
             mode=Mode.PROXY, kind="strong", cache: ProxyCache | None = None,
             weak_scheme=None, threshold_scale: str = "rms") -> H2Matrix:
    """Bottom-up ID-based H² construction of K(points, points).

    ``scheme`` selects the level proxies (ID selection by default). In weak
    Proxy mode the level proxies are drawn with ``weak_scheme`` (default: ID
    selection with half the candidates near the cluster). Hybrid mode needs
    weak admissibility and uses the strong-level proxies for the far field and
    the neighbors' candidate points for the near field.

    Each cluster's ID threshold is ``tau * sqrt(m) * scale`` for m targets.
    With ``threshold_scale="rms"`` the scale is the RMS entry of the block, so
    the cluster's error is at most ``tau`` relative in Frobenius norm; ``"max"``
    uses the largest entry instead.
    """
    t_start = time.perf_counter()
    mode = Mode(mode)
    kind = Admissibility(kind)
    scheme = scheme if scheme is not None else IdSelectParams()
    cache = cache if cache is not None else ProxyCache()
    if kind is Admissibility.WEAK and mode is Mode.PROXY and k.singular_on_diagonal:
        raise ValueError(
            f"{k.name} is singular on the boundary between touching boxes, so weak "
            "admissibility has no separable far field; use mode='hybrid'")
    if threshold_scale not in ("rms", "max"):
        raise ValueError("threshold_scale must be 'rms' or 'max'")
    if mode is Mode.HYBRID and kind is not Admissibility.WEAK:
        raise ValueError("hybrid compression applies to weak admissibility")
    if kind is Admissibility.WEAK and mode is Mode.PROXY:
        weak_scheme = weak_scheme if weak_scheme is not None else _adaptive(scheme)

    L, d = tree.L, tree.dim
    X = tree.points
    coupled, dense_pairs = _interactions(tree, kind)
    skel: dict[int, np.ndarray] = {}
    Wd: dict[int, np.ndarray | None] = {}
    stats = BuildStats(N=tree.n)
    t_proxy = t_comp = 0.0
    misses0, hits0 = cache.misses, cache.hits

    for lev in range(tree.depth - 1, -1, -1):
        ids = tree.levels[lev]
        needed = lev >= 1 and (bool(coupled.get(lev)) or _has_coupled_ancestor(tree, coupled, lev))
        ranks = []
        for i in ids:
            nd = tree.nodes[i]
            cand = (np.arange(nd.start, nd.end) if nd.is_leaf
                    else np.concatenate([skel[c] for c in nd.children]))
            if not needed:
                skel[i], Wd[i] = cand, None
                continue
            c = nd.box.center
            t0 = time.perf_counter()
            if mode is Mode.DIRECT:
                targets = X[_far_points(tree, i, kind)]
            elif mode is Mode.HYBRID:
                near = [tree.nodes[j] for j in tree.neighbors(i) if j != i]
                near_idx = [np.arange(q.start, q.end) if q.is_leaf
                            else np.concatenate([skel[cc] for cc in q.children]) for q in near]
                parts = [X[np.concatenate(near_idx)]] if near_idx else []
                far_pair = level_domain_pair(lev, L, d, "strong")
                if not far_pair.is_empty:
                    ps = cache.get(k, far_pair.translate(c), scheme)
                    parts.append(ps.points.points)
                    stats.level_proxy_sizes[lev] = len(ps)
                targets = np.concatenate(parts) if parts else np.zeros((0, d))
            else:
                pair = level_domain_pair(lev, L, d, kind)
                if pair.is_empty:
                    skel[i], Wd[i] = cand, None
                    continue
                ps = cache.get(k, pair.translate(c),
                               weak_scheme if kind is Admissibility.WEAK else scheme)
                targets = ps.points.points
                stats.level_proxy_sizes[lev] = len(ps)
            t1 = time.perf_counter()
            t_proxy += t1 - t0
            if targets.shape[0] == 0:
                skel[i], Wd[i] = cand, None
                continue
            A = assemble(k, X[cand], targets)
            scale = (float(np.sqrt(np.mean(A * A))) if threshold_scale == "rms"
                     else float(np.abs(A).max()))
            eps = tau * math.sqrt(targets.shape[0]) * scale
            res = id_rows(A, C, Threshold(eps))
            skel[i] = cand[res.skeleton]
            Wd[i] = res.U
            ranks.append(res.rank)
            t_comp += time.perf_counter() - t1
        if ranks:
            stats.level_ranks[lev] = (min(ranks), float(np.mean(ranks)), max(ranks))

    t0 = time.perf_counter()
    coupling = {}
    for lev, pairs in coupled.items():
        for i, j in pairs:
            coupling[(i, j)] = assemble(k, X[skel[i]], X[skel[j]])
    dense = {}
    for i, j in dense_pairs:
        a, b = tree.nodes[i], tree.nodes[j]
        dense[(i, j)] = (assemble_self(k, X[a.start:a.end]) if i == j
                         else assemble(k, X[a.start:a.end], X[b.start:b.end]))
    t_blocks = time.perf_counter() - t0

    H = H2Matrix(tree, k, kind, skel, Wd, coupling, dense, stats)
    _storage(H)
    stats.proxy_selections = cache.misses - misses0
    stats.proxy_cache_hits = cache.hits - hits0
    stats.seconds = {"proxy": t_proxy, "compress": t_comp, "blocks": t_blocks,
                     "total": time.perf_counter() - t_start}
    return H


def _adaptive(scheme):
    if isinstance(scheme, IdSelectParams) and scheme.adaptive is None:
        return IdSelectParams(scheme.xd_count, scheme.yd_count, scheme.threshold_floor,
                              scheme.refine_factor, scheme.max_rounds, (0.5, None),
                              scheme.gap, scheme.C)
    return scheme


def _has_coupled_ancestor(tree, coupled, lev) -> bool:
    """Nodes below a coupled level still need nested bases."""
    return any(coupled.get(l2) for l2 in range(1, lev))


def _storage(H: H2Matrix):
    s = H.stats
    tree = H.tree
    n = tree.n
    s.S_N = 8.0 * n * n / MB
    dense_full = dense_kept = 0
    for (i, j), D in H.dense.items():
        dense_kept += D.size
        dense_full += D.size * (1 if i == j else 2)
    coup_kept = sum(B.size for B in H.coupling.values())
    basis = sum(W.size for W in H.W.values() if W is not None)
    s.S_inadm = 8.0 * dense_full / MB
    s.S_coupling = 8.0 * 2 * coup_kept / MB
    s.S_basis = 8.0 * basis / MB
    s.S_total = s.S_inadm + s.S_coupling + s.S_basis
    s.S_stored = 8.0 * (dense_kept + coup_kept + basis) / MB


# ------------------------------------------------------------------ products

def matvec(H: H2Matrix, v) -> np.ndarray:
    """``K v`` through the H² representation; ``v`` may be (N,) or (N, nrhs)."""
    v = np.asarray(v, dtype=np.float64)
    one = v.ndim == 1
    V = v.reshape(-1, 1) if one else v
    if V.shape[0] != H.n:
        raise ValueError(f"vector length {V.shape[0]} does not match N={H.n}")
    tree = H.tree
    x = V[tree.perm]
    y = np.zeros_like(x)
    nodes = tree.nodes
    up: dict[int, np.ndarray] = {}
    for lev in range(tree.depth - 1, 0, -1):
        for i in tree.levels[lev]:
            nd = nodes[i]
            u = x[nd.start:nd.end] if nd.is_leaf else np.concatenate([up[c] for c in nd.children])
            W = H.W[i]
            up[i] = u if W is None else W.T @ u
    down = {i: np.zeros_like(u) for i, u in up.items()}
    for (i, j), B in H.coupling.items():
        down[i] += B @ up[j]
        down[j] += B.T @ up[i]
    for lev in range(1, tree.depth):
        for i in tree.levels[lev]:
            nd = nodes[i]
            W = H.W[i]
            z = down[i] if W is None else W @ down[i]
            if nd.is_leaf:
                y[nd.start:nd.end] += z
            else:
                o = 0
                for c in nd.children:
                    r = len(up[c])
                    down[c] += z[o:o + r]
                    o += r
    for (i, j), D in H.dense.items():
        a, b = nodes[i], nodes[j]
        y[a.start:a.end] += D @ x[b.start:b.end]
        if i != j:
            y[b.start:b.end] += D.T @ x[a.start:a.end]
    out = np.empty_like(y)
    out[tree.perm] = y
    return out[:, 0] if one else out


def audit(H: H2Matrix, sample_budget: float = 2e8, seed: int = 0) -> BuildStats:
    """Relative Frobenius error over all compressed blocks.

    Blocks are compared exactly while the total number of entries stays within
    ``sample_budget``; above it each block is checked on a random subset of
    its rows (same fraction for every block) and ``E_sampled`` is set.
    """
    tree, k = H.tree, H.kernel
    X = tree.points
    nodes = tree.nodes
    total = sum(nodes[i].size * nodes[j].size for i, j in H.coupling)
    frac = min(1.0, sample_budget / total) if total else 1.0
    gen = rng(seed)
    bases: dict[int, np.ndarray] = {}

    def U(i):
        if i not in bases:
            bases[i] = H.basis(i)
        return bases[i]

    num = den = 0.0
    for (i, j), B in sorted(H.coupling.items()):
        a, b = nodes[i], nodes[j]
        rows = np.arange(a.size)
        if frac < 1.0:
            m = max(1, int(round(frac * a.size)))
            rows = np.sort(gen.choice(a.size, size=m, replace=False))
        exact = assemble(k, X[a.start + rows], X[b.start:b.end])
        approx = (U(i)[rows] @ B) @ U(j).T
        num += float(np.sum((exact - approx) ** 2))
        den += float(np.sum(exact ** 2))
    H.stats.E = math.sqrt(num / den) if den > 0 else 0.0
    H.stats.E_sampled = frac < 1.0
    return H.stats


def dense_matrix(k: Kernel, points) -> np.ndarray:
    """Full K(X, X); singular kernels get a zero diagonal."""
    P = points.points if isinstance(points, PointSet) else np.asarray(points, float)
    return assemble_self(k, P)


def uniform_cloud(n: int, dim: int, seed: int = 0) -> tuple[PointSet, Box]:
    """``n`` uniform random points in ``[0, L]^d`` with ``L = n^(1/d)``."""
    L = n ** (1.0 / dim)
    box = Box(tuple([0.0] * dim), tuple([L] * dim))
    pts = rng(seed).uniform(0.0, L, size=(n, dim))
    return PointSet(pts, f"uniform(seed={seed})"), box
