"""Proxy-point compression of kernel blocks K(X0, Y0).

Step 1 computes a row ID of the small block K(X0, Y_p), giving skeleton rows
X_rep and weights W. Step 2 reuses them for any far-field target set:
K(X0, Y0) ~ W K(X_rep, Y0). Y0 never enters the construction, so the cost of
step 1 does not depend on |Y0|.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box, GridApprox, PointSet, ShellRegion, generate_points
from .kernels import Kernel, assemble
from .linalg import FixedRank, Threshold, id_rows, ls_project
from .proxy import ProxySet

DEFAULT_TOL = 1e-6
# probe columns handled per chunk in diagnostics
_PROBE_CHUNK = 4096


class MembershipWarning(UserWarning):
    """Targets outside the far-field region; the error bound no longer applies."""


@dataclass
class CompressionResult:
    """``K(X0, .) ~ W K(X0[x_rep], .)``; W has identity rows at ``x_rep``."""

    x_rep: np.ndarray
    W: np.ndarray
    epsilon: float | None
    proxy: ProxySet | None
    C: float = 2.0
    deficient: bool = False

    @property
    def rank(self) -> int:
        return len(self.x_rep)


@dataclass
class ErrorReport:
    """Per-row error quantities; ratios are NaN on skeleton rows."""

    err_Yp: np.ndarray
    err_Y0: np.ndarray
    max_abs: np.ndarray
    ratio_max: np.ndarray
    ratio_avg: np.ndarray
    representation_deviation: float
    s_norm_max: float
    mean_error_field: np.ndarray

    @property
    def max_pointwise(self) -> float:
        return float(self.max_abs.max()) if self.max_abs.size else 0.0


def _coords(P) -> np.ndarray:
    return P.points if isinstance(P, PointSet) else np.atleast_2d(np.asarray(P, dtype=float))


def default_threshold(n_targets: int, tol: float = DEFAULT_TOL) -> float:
    """``tol * sqrt(n)``: bounds the average entrywise error of each row by ``tol``."""
    return tol * math.sqrt(n_targets)


def _pad_rank(skel: np.ndarray, U: np.ndarray, want: int):
    """Promote extra rows to the skeleton until it has ``want`` members."""
    n = U.shape[0]
    extra = [i for i in range(n) if i not in set(skel.tolist())][: want - len(skel)]
    skel = np.r_[skel, extra].astype(int)
    U2 = np.zeros((n, len(skel)))
    U2[:, : U.shape[1]] = U
    U2[extra] = 0.0
    U2[extra, np.arange(U.shape[1], len(skel))] = 1.0
    return skel, U2


def id_compress(k: Kernel, X0, targets, stop, C: float = 2.0):
    """Row ID of ``K(X0, targets)``; returns ``(x_rep, W, eps, row_errors)``."""
    X = _coords(X0)
    A = assemble(k, X, _coords(targets))
    res = id_rows(A, C, stop)
    skel, U = res.skeleton, res.U
    if isinstance(stop, FixedRank):
        want = min(stop.k, X.shape[0])
        if res.rank < want:
            skel, U = _pad_rank(skel, U, want)
    eps = stop.eps if isinstance(stop, Threshold) else None
    return skel, U, eps, res.residual_row_norms


def _check_source(X0, box: Box):
    X = _coords(X0)
    if X.shape[0] == 0:
        raise ValueError("X0 is empty")
    if not np.all(box.contains(X)):
        raise ValueError("X0 has points outside the source box of the proxy's domain pair")


def compress_proxy(k: Kernel, X0, proxy: ProxySet, stop=None, C: float = 2.0,
                   tol: float = DEFAULT_TOL, check: bool = True) -> CompressionResult:
    """Step 1: ID of K(X0, Y_p). ``stop`` defaults to ``Threshold(tol*sqrt(|Y_p|))``."""
    if len(proxy) < 1:
        raise ValueError("proxy set is empty")
    if check:
        _check_source(X0, proxy.pair.source)
    elif len(_coords(X0)) == 0:
        raise ValueError("X0 is empty")
    stop = stop if stop is not None else Threshold(default_threshold(len(proxy), tol))
    skel, W, eps, _ = id_compress(k, X0, proxy.points, stop, C)
    return CompressionResult(skel, W, eps, proxy, C)


def evaluate_approx(res: CompressionResult, k: Kernel, X0, Y0, check: bool = True,
                    factors: bool = False):
    """Step 2: ``W K(X_rep, Y0)``, or the pair ``(W, K(X_rep, Y0))`` when ``factors``."""
    Y = _coords(Y0)
    if check and res.proxy is not None:
        inside = res.proxy.pair.target.contains(Y)
        if not np.all(inside):
            warnings.warn(f"{int((~inside).sum())} target points lie outside the far field",
                          MembershipWarning, stacklevel=2)
    Kr = assemble(k, _coords(X0)[res.x_rep], Y)
    return (res.W, Kr) if factors else res.W @ Kr


def refine_weights(res: CompressionResult, k: Kernel, X0, Y0) -> CompressionResult:
    """Replace W by the least-squares optimal weights for the rows K(X_rep, Y0).

    The refined weights are no longer bounded by C.
    """
    X, Y = _coords(X0), _coords(Y0)
    if Y.shape[0] < res.rank:
        raise ValueError("refinement needs at least rank target points")
    proj = ls_project(assemble(k, X[res.x_rep], Y), assemble(k, X, Y))
    W = proj.U
    W[res.x_rep] = np.eye(res.rank)
    return replace(res, W=W, deficient=proj.deficient)


@dataclass
class HybridSplit:
    near: np.ndarray
    far: np.ndarray


def compress_hybrid(k: Kernel, X0, Y0, near_region: ShellRegion, proxy_far: ProxySet,
                    eps: float | None = None, C: float = 2.0,
                    tol: float = DEFAULT_TOL) -> tuple[CompressionResult, HybridSplit]:
    """ID of K(X0, Y0_near + Y_p,far): literal near targets, proxies for the far field."""
    Y = _coords(Y0)
    near_mask = near_region.contains(Y) if Y.shape[0] else np.zeros(0, dtype=bool)
    split = HybridSplit(np.flatnonzero(near_mask), np.flatnonzero(~near_mask))
    targets = np.concatenate([Y[near_mask], proxy_far.points.points])
    if targets.shape[0] == 0:
        raise ValueError("no near targets and no far proxies")
    if eps is None:
        eps = default_threshold(targets.shape[0], tol)
    skel, W, eps, _ = id_compress(k, X0, targets, Threshold(eps), C)
    return CompressionResult(skel, W, eps, proxy_far, C), split


def _pinv_rows(B: np.ndarray, rank_tol: float) -> np.ndarray:
    """``P`` with ``P @ rhs`` the minimum-norm least-squares solution of ``B s = rhs``."""
    return ls_project(B.T, np.eye(B.shape[0]), rank_tol).U.T


def diagnostics(k: Kernel, X0, res: CompressionResult, probe, Xp=None,
                rank_tol: float = 1e-12) -> ErrorReport:
    """Errors of the compression on ``probe`` and the error-representation check.

    ``S(y) = K(X_p, Y_p)^+ K(X_p, y)`` is estimated from ``Xp`` (default: a grid
    of ``4|Y_p|`` points in the source box); the deviation reported is
    ``max_{i, y} |e_i(y) - e_i(Y_p) S(y)|``.
    """
    if res.proxy is None:
        raise ValueError("diagnostics needs a proxy-based compression")
    X = _coords(X0)
    Yp = res.proxy.points.points
    npx = len(Yp)
    if Xp is None:
        Xp = generate_points(res.proxy.pair.source, GridApprox(4 * npx))
    Xpc = _coords(Xp)
    if Xpc.shape[0] < npx:
        raise ValueError("|Xp| must be at least |Y_p|")
    P = _pinv_rows(assemble(k, Xpc, Yp), rank_tol)
    Kr = X[res.x_rep]

    def errors(Y):
        return assemble(k, X, Y) - res.W @ assemble(k, Kr, Y)

    eYp = errors(Yp)
    err_Yp = np.linalg.norm(eYp, axis=1)
    Y0 = _coords(probe)
    n = X.shape[0]
    sq = np.zeros(n)
    mx = np.zeros(n)
    dev = 0.0
    smax = 0.0
    rest = np.ones(n, dtype=bool)
    rest[res.x_rep] = False
    field = np.empty(Y0.shape[0])
    for c0 in range(0, Y0.shape[0], _PROBE_CHUNK):
        Y = Y0[c0:c0 + _PROBE_CHUNK]
        e = errors(Y)
        sq += np.einsum("ij,ij->i", e, e)
        mx = np.maximum(mx, np.abs(e).max(axis=1))
        S = P @ assemble(k, Xpc, Y)
        smax = max(smax, float(np.linalg.norm(S, axis=0).max()))
        dev = max(dev, float(np.abs(e - eYp @ S).max()))
        field[c0:c0 + _PROBE_CHUNK] = np.abs(e[rest]).mean(axis=0) if rest.any() else 0.0
    err_Y0 = np.sqrt(sq)
    ratio_max = np.full(n, np.nan)
    ratio_avg = np.full(n, np.nan)
    base = err_Yp / math.sqrt(npx)
    ok = rest & (base > 0)
    ratio_max[ok] = mx[ok] / base[ok]
    ratio_avg[ok] = (err_Y0[ok] / math.sqrt(Y0.shape[0])) / base[ok]
    return ErrorReport(err_Yp, err_Y0, mx, ratio_max, ratio_avg, dev, smax, field)
