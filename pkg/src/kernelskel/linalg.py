"""Dense factorizations: strong RRQR, interpolative decomposition, baselines.

``srrqr`` is a Householder QR with column pivoting (residual column norms
downdated with the LAPACK recompute guard) followed by the Gu-Eisenstat swap
phase. A swap is made
while some pair (i, j) satisfies

    T[i, j]^2 + (gamma_j * ||row i of R11^-1||)^2 > C^2,

which is exactly the factor by which exchanging the two columns would grow
|det R11|. On exit every entry of T = R11^-1 R12 is bounded by C.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import blas, solve_triangular

EPS = np.finfo(np.float64).eps
# downdated squared norms below this fraction of their reference are recomputed
_RECOMPUTE = 1e-8


@dataclass(frozen=True)
class Threshold:
    eps: float

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("threshold must be non-negative")


@dataclass(frozen=True)
class FixedRank:
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("rank must be non-negative")


@dataclass
class SrrqrResult:
    """``A[:, perm] = Q [[R11, R12], [0, R22]]``; T = R11^-1 R12.

    ``residual_col_norms`` are the column norms of R22, i.e. the distances of
    the unselected columns from the span of the selected ones.
    """

    perm: np.ndarray
    rank: int
    R11: np.ndarray
    R12: np.ndarray
    T: np.ndarray
    residual_col_norms: np.ndarray
    swaps: int = 0


@dataclass
class IdResult:
    """Row ID ``A ~ U A[skeleton]``; U has identity rows on the skeleton."""

    skeleton: np.ndarray
    U: np.ndarray
    epsilon: float | None
    entry_bound: float
    residual_row_norms: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return len(self.skeleton)


class _Factor:
    """Right-looking Householder QR with column pivoting, in place on a copy.

    After ``k`` steps ``W[:k]`` holds the rows of R and ``W[k:, k:]`` the
    trailing block, whose column norms are the residual norms.
    """

    def __init__(self, A: np.ndarray):
        self.W = np.array(A, dtype=np.float64, order="F", copy=True)
        n, m = self.W.shape
        self.perm = np.arange(m)
        self.k = 0
        self.norms2 = np.einsum("ij,ij->j", self.W, self.W)
        self.ref2 = self.norms2.copy()

    def max_gamma(self) -> float:
        if self.k >= self.W.shape[1]:
            return 0.0
        return float(np.sqrt(max(self.norms2[self.k:].max(), 0.0)))

    def pivot(self) -> int:
        """Position of the largest residual column; ties go to the lowest original index."""
        g = self.norms2[self.k:]
        cand = np.flatnonzero(g == g.max())
        return self.k + int(cand[np.argmin(self.perm[self.k + cand])])

    def _swap(self, a: int, b: int):
        if a == b:
            return
        W = self.W
        W[:, [a, b]] = W[:, [b, a]]
        for arr in (self.perm, self.norms2, self.ref2):
            arr[[a, b]] = arr[[b, a]]

    def _exact_norms(self, start: int):
        blk = self.W[self.k:, start:]
        self.norms2[start:] = np.einsum("ij,ij->j", blk, blk)
        self.ref2[start:] = self.norms2[start:]

    def step(self, p: int) -> bool:
        """Move column ``p`` to position k and eliminate below the diagonal."""
        k = self.k
        W = self.W
        self._swap(k, p)
        x = W[k:, k]
        alpha = float(np.linalg.norm(x))
        if alpha == 0.0:
            return False
        beta = -np.copysign(alpha, x[0])
        v = x.copy()
        v[0] -= beta
        tau = 2.0 / (v @ v)
        n, m = W.shape
        if k + 1 < m:
            # BLAS on the full-height (F-contiguous) column slice updates in place;
            # the leading zeros of the padded reflector leave rows < k untouched
            vf = np.zeros(n)
            vf[k:] = v
            trail = W[:, k + 1:]
            w = blas.dgemv(1.0, trail, vf, trans=1)
            blas.dger(-tau, vf, w, a=trail, overwrite_a=1)
        W[k, k] = beta
        W[k + 1:, k] = 0.0
        self.k = k + 1
        if k + 1 < m:
            rest = slice(k + 1, m)
            self.norms2[rest] -= W[k, rest] ** 2
            bad = k + 1 + np.flatnonzero(self.norms2[rest] < _RECOMPUTE * self.ref2[rest])
            if bad.size:
                blk = W[k + 1:, bad]
                self.norms2[bad] = np.einsum("ij,ij->j", blk, blk)
                self.ref2[bad] = self.norms2[bad]
        return True

    def drop(self, i: int):
        """Move leading column i to position k-1 and undo its elimination step."""
        k = self.k
        W = self.W
        order = np.r_[np.arange(i), np.arange(i + 1, k), i]
        W[:, :k] = W[:, order]
        self.perm[:k] = self.perm[order]
        for t in range(i, k - 1):
            a, b = W[t, t], W[t + 1, t]
            h = np.hypot(a, b)
            if h == 0.0:
                continue
            c, s = a / h, b / h
            rt, rb = W[t, t:].copy(), W[t + 1, t:].copy()
            W[t, t:] = c * rt + s * rb
            W[t + 1, t:] = -s * rt + c * rb
            W[t + 1, t] = 0.0
        self.k = k - 1
        self._exact_norms(k - 1)

    def triangle(self):
        k = self.k
        R11 = np.triu(self.W[:k, :k])
        R12 = np.array(self.W[:k, k:])
        return R11, R12


def _solve_T(R11: np.ndarray, R12: np.ndarray) -> np.ndarray:
    if R11.shape[0] == 0 or R12.shape[1] == 0:
        return np.zeros(R12.shape)
    return solve_triangular(R11, R12, lower=False, check_finite=False)


def srrqr(A, C: float = 2.0, stop=None, max_swaps: int | None = None) -> SrrqrResult:
    """Strong rank-revealing QR of the columns of ``A``.

    ``stop`` is ``Threshold(eps)`` (smallest rank whose residual columns all have
    2-norm <= eps, still true after the swap phase) or ``FixedRank(k)``.
    """
    if C < 1:
        raise ValueError("entry bound C must be >= 1")
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("A must be a non-empty matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("A has non-finite entries")
    n, m = A.shape
    full = min(n, m)
    stop = stop if stop is not None else Threshold(0.0)
    if isinstance(stop, FixedRank):
        target = min(stop.k, full)
        eps = None
    elif isinstance(stop, Threshold):
        target = full
        eps = stop.eps
    else:
        raise TypeError(f"unknown stop rule {stop!r}")

    F = _Factor(A)
    swaps = 0
    limit = max_swaps if max_swaps is not None else 20 * full + 100
    while True:
        # greedy pivoting
        while F.k < target:
            if eps is not None and F.max_gamma() <= eps:
                break
            if not F.step(F.pivot()):
                break
        # Gu-Eisenstat swaps
        while 0 < F.k < m and swaps < limit:
            R11, R12 = F.triangle()
            T = _solve_T(R11, R12)
            Rinv = solve_triangular(R11, np.eye(F.k), lower=False, check_finite=False)
            w = np.linalg.norm(Rinv, axis=1)
            gam = np.sqrt(np.maximum(F.norms2[F.k:], 0.0))
            rho2 = T * T + np.square(w[:, None] * gam[None, :])
            flat = int(np.argmax(rho2))
            if not rho2.flat[flat] > C * C:
                break
            i, j = divmod(flat, m - F.k)
            pos = F.k + j
            F.drop(i)
            F.step(pos)
            swaps += 1
        if eps is None or F.k >= target or F.max_gamma() <= eps:
            break

    k = F.k
    R11, R12 = F.triangle()
    T = _solve_T(R11, R12)
    F._exact_norms(k)
    gam = np.sqrt(np.maximum(F.norms2[k:], 0.0))
    return SrrqrResult(perm=F.perm.copy(), rank=k, R11=R11, R12=R12, T=T,
                       residual_col_norms=gam, swaps=swaps)


def id_rows(A, C: float = 2.0, stop=None) -> IdResult:
    """Row interpolative decomposition via sRRQR on ``A^T``."""
    A = np.asarray(A, dtype=np.float64)
    res = srrqr(A.T, C, stop)
    n = A.shape[0]
    k = res.rank
    U = np.zeros((n, k))
    skel = res.perm[:k]
    U[skel, np.arange(k)] = 1.0
    U[res.perm[k:]] = res.T.T
    eps = stop.eps if isinstance(stop, Threshold) else None
    row_norms = np.zeros(n)
    row_norms[res.perm[k:]] = res.residual_col_norms
    return IdResult(skeleton=skel, U=U, epsilon=eps, entry_bound=C, residual_row_norms=row_norms)


# ----------------------------------------------------------------- Householder QR

def householder_qr(M, pivoting: bool = False):
    """Householder QR ``M[:, perm] = Q R``.

    Returns ``(Q, R, perm)`` with Q of shape (m, min(m, k)) and R upper
    triangular. Column pivoting (largest remaining norm first) reveals rank.
    """
    A = np.array(M, dtype=np.float64, order="F", copy=True)
    m, k = A.shape
    p = min(m, k)
    perm = np.arange(k)
    vs = []
    taus = np.zeros(p)
    norms2 = np.einsum("ij,ij->j", A, A) if pivoting else None
    for j in range(p):
        if pivoting:
            jj = j + int(np.argmax(norms2[j:]))
            if jj != j:
                A[:, [j, jj]] = A[:, [jj, j]]
                perm[[j, jj]] = perm[[jj, j]]
                norms2[[j, jj]] = norms2[[jj, j]]
        x = A[j:, j]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            vs.append(np.zeros_like(x))
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        vn2 = v @ v
        taus[j] = 2.0 / vn2
        vs.append(v)
        blk = A[j:, j:]
        blk -= np.outer(v, taus[j] * (v @ blk))
        A[j + 1:, j] = 0.0
        if pivoting:
            norms2[j + 1:] = np.einsum("ij,ij->j", A[j + 1:, j + 1:], A[j + 1:, j + 1:])
    R = np.triu(A[:p, :])
    Q = np.eye(m, p)
    for j in range(p - 1, -1, -1):
        v = vs[j]
        if taus[j] == 0.0:
            continue
        Q[j:, j:] -= np.outer(v, taus[j] * (v @ Q[j:, j:]))
    return Q, R, perm


class Projection(NamedTuple):
    U: np.ndarray
    rank: int
    deficient: bool


def ls_project(basis_rows, A, rank_tol: float = 1e-12) -> Projection:
    """``argmin_U ||A - U basis_rows||_F`` via a QR of ``basis_rows^T``.

    A rank-deficient basis (relative to ``rank_tol``) gets the minimum-norm
    solution and ``deficient=True``.
    """
    B = np.asarray(basis_rows, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    k, m = B.shape
    if A.shape[1] != m:
        raise ValueError("A and basis_rows need the same number of columns")
    if k > m:
        raise ValueError("more basis rows than columns")
    Q, R, perm = householder_qr(B.T, pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > rank_tol * d[0])) if d.size and d[0] > 0 else 0
    Z = A @ Q[:, :r]
    U = np.zeros((A.shape[0], k))
    if r == k:
        # U[:, perm] R^T = Z, so R U[:, perm]^T = Z^T
        V = solve_triangular(R[:r, :r], Z.T, lower=False).T
    else:
        # min-norm V with V R[:r]^T = Z: R[:r]^T = Q2 L
        Q2, L, _ = householder_qr(R[:r].T)
        V = solve_triangular(L, Z.T, trans="T", lower=False).T @ Q2.T
    U[:, perm] = V
    return Projection(U, r, r < k)


# ----------------------------------------------------------------- baselines

class SvdResult(NamedTuple):
    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    singular_values: np.ndarray

    def matrix(self) -> np.ndarray:
        return (self.U * self.s) @ self.Vt


def truncated_svd(A, r: int) -> SvdResult:
    """Best rank-r approximation (LAPACK gesdd)."""
    A = np.asarray(A, dtype=np.float64)
    if not 1 <= r <= min(A.shape):
        raise ValueError("rank out of range")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return SvdResult(U[:, :r], s[:r], Vt[:r], s)


@dataclass(frozen=True)
class Tolerance:
    tol: float


@dataclass
class AcaResult:
    rank: int
    row_pivots: list
    col_pivots: list
    U: np.ndarray
    V: np.ndarray
    zero_pivot: bool
    entries_evaluated: int

    def matrix(self) -> np.ndarray:
        return self.U @ self.V


def aca(row_oracle: Callable[[int], np.ndarray], col_oracle: Callable[[int], np.ndarray],
        shape: tuple[int, int], stop, start_row: int = 0) -> AcaResult:
    """Partially pivoted adaptive cross approximation.

    Each step takes the residual of the current row, pivots on its largest
    entry, takes the residual of that column and moves to the column's largest
    unused row. ``Tolerance(tol)`` stops at the first new term with
    ``|u||v| <= tol * ||A_k||_F``; that term is not kept.
    """
    n, m = shape
    maxrank = min(n, m)
    if isinstance(stop, FixedRank):
        maxrank = min(maxrank, stop.k)
        tol = None
    elif isinstance(stop, Tolerance):
        tol = stop.tol
    else:
        raise TypeError(f"unknown stop rule {stop!r}")
    us, vs = [], []
    rows, cols = [], []
    used_r = np.zeros(n, dtype=bool)
    used_c = np.zeros(m, dtype=bool)
    norm2 = 0.0
    evals = 0
    zero = False
    i = start_row
    while len(us) < maxrank:
        row = np.array(row_oracle(i), dtype=np.float64)
        evals += m
        for u, v in zip(us, vs):
            row -= u[i] * v
        used_r[i] = True
        cand = np.where(used_c, 0.0, np.abs(row))
        j = int(np.argmax(cand))
        if cand[j] == 0.0:
            zero = True
            break
        v = row / row[j]
        col = np.array(col_oracle(j), dtype=np.float64)
        evals += n
        for u, vv in zip(us, vs):
            col -= vv[j] * u
        used_c[j] = True
        rows.append(i)
        cols.append(j)
        u = col
        uv2 = (u @ u) * (v @ v)
        # a term below tolerance adds nothing the estimate asks for; drop it
        if tol is not None and us and np.sqrt(uv2) <= tol * np.sqrt(max(norm2, 0.0)):
            rows.pop()
            cols.pop()
            break
        cross = sum(2.0 * (uu @ u) * (vv @ v) for uu, vv in zip(us, vs))
        norm2 += uv2 + cross
        us.append(u)
        vs.append(v)
        if used_r.all():
            break
        nxt = np.where(used_r, -1.0, np.abs(u))
        i = int(np.argmax(nxt))
    r = len(us)
    U = np.array(us).T if r else np.zeros((n, 0))
    V = np.array(vs) if r else np.zeros((0, m))
    return AcaResult(r, rows, cols, U, V, zero, evals)


# ----------------------------------------------------------------- matrix files

_MAGIC = b"KSKMAT01"


def save_matrix(path, A) -> None:
    """Binary: 8-byte magic, uint64 rows, uint64 cols, row-major float64 (LE)."""
    A = np.ascontiguousarray(A, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQ", *A.shape))
        fh.write(A.tobytes())


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a matrix file")
    rows, cols = struct.unpack("<QQ", data[8:24])
    body = data[24:]
    if len(body) != 8 * rows * cols:
        raise ValueError(f"{path}: truncated matrix data")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
