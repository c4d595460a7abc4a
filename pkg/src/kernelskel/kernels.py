"""Kernel functions and dense block assembly.

Two translation-invariant kernels are provided, ``1/|x-y|`` and
``sqrt(1+|x-y|^2)``, plus a degenerate kernel with a prescribed finite
separable expansion that serves as an exact-rank oracle in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev

from . import _backend
from .geometry import Box, DomainPair, PointSet, rng

# |x - y| below this is treated as coincident for singular kernels
COINCIDENT_TOL = 1e-14


class CoincidentPointsError(ValueError):
    """A singular kernel was asked to evaluate K(x, x)."""

    def __init__(self, i: int, j: int, dist: float):
        super().__init__(f"coincident points for singular kernel: X[{i}] and Y[{j}] "
                         f"are {dist:.3g} apart")
        self.pair = (i, j)


class Kernel:
    """Base class; subclasses implement ``_fill(X, Y, out)``."""

    name = "kernel"
    singular_on_diagonal = False
    translation_invariant = True

    def key(self) -> tuple:
        return (self.name,)

    def __call__(self, X, Y) -> np.ndarray:
        return assemble(self, X, Y)


@dataclass(frozen=True)
class InverseDistance(Kernel):
    """K(x, y) = 1 / |x - y|."""

    name = "inv-dist"
    singular_on_diagonal = True
    _code = _backend.INV_DIST


@dataclass(frozen=True)
class Multiquadric(Kernel):
    """K(x, y) = sqrt(1 + |x - y|^2)."""

    name = "multiquadric"
    _code = _backend.MULTIQUADRIC


def _multi_indices(r: int, d: int) -> list[tuple[int, ...]]:
    """First ``r`` tensor-product degrees, by total degree then lexicographically."""
    out: list[tuple[int, ...]] = []
    total = 0
    while len(out) < r:
        level = [idx for idx in np.ndindex(*([total + 1] * d)) if sum(idx) == total]
        out.extend(sorted(level, reverse=True))
        total += 1
    return out[:r]


@dataclass(frozen=True)
class DegenerateKernel(Kernel):
    """K(x, y) = sum_i sigma_i psi_i(x) phi_i(y) with Chebyshev factors.

    ``psi_i`` are tensor-product Chebyshev polynomials scaled to ``x_box``;
    ``phi_i`` the same family scaled to ``y_box``, optionally mixed by the
    orthogonal matrix ``mix`` (shape r x r). Not translation invariant: the
    factor functions are tied to the boxes.
    """

    x_box: Box
    y_box: Box
    sigma: tuple
    mix: np.ndarray | None = field(default=None, compare=False)

    name = "degenerate"
    translation_invariant = False

    @property
    def rank(self) -> int:
        return len(self.sigma)

    def key(self) -> tuple:
        mix = None if self.mix is None else self.mix.round(14).tobytes()
        return (self.name, self.x_box, self.y_box, tuple(self.sigma), mix)

    def _factor(self, P: np.ndarray, box: Box) -> np.ndarray:
        d = box.dim
        lo, hi = np.array(box.lo), np.array(box.hi)
        t = 2.0 * (P - lo) / (hi - lo) - 1.0
        idx = _multi_indices(self.rank, d)
        deg = max(max(i) for i in idx)
        V = [chebyshev.chebvander(t[:, k], deg) for k in range(d)]
        F = np.ones((P.shape[0], self.rank))
        for col, multi in enumerate(idx):
            for k, a in enumerate(multi):
                F[:, col] *= V[k][:, a]
        return F

    def psi(self, X: np.ndarray) -> np.ndarray:
        """Rows are points, columns are psi_1..psi_r."""
        return self._factor(X, self.x_box)

    def phi(self, Y: np.ndarray) -> np.ndarray:
        F = self._factor(Y, self.y_box)
        return F if self.mix is None else F @ self.mix.T

    def _fill(self, X, Y, out):
        out[:] = (self.psi(X) * np.asarray(self.sigma)) @ self.phi(Y).T


def degenerate_sigma(r: int) -> np.ndarray:
    """Coefficients 2^-i, with the decay rate capped so sigma_r stays above ~1e-9.

    Plain 2^-i would push terms past ~45 below double precision, so the
    prescribed rank could not be observed numerically.
    """
    s = min(1.0, 30.0 / r)
    return 2.0 ** (-s * np.arange(1, r + 1))


def make_degenerate(pair: DomainPair, r: int, seed: int | None = None) -> DegenerateKernel:
    """Exact rank-``r`` kernel on ``pair``.

    ``seed`` (optional) mixes the y-factors with a random orthogonal matrix;
    the rank is unchanged.
    """
    if r < 1:
        raise ValueError("rank must be at least 1")
    mix = None
    if seed is not None:
        q, rr = np.linalg.qr(rng(seed).standard_normal((r, r)))
        mix = q * np.sign(np.diag(rr))
    return DegenerateKernel(pair.source, pair.target.outer, tuple(degenerate_sigma(r)), mix)


def _coords(P) -> np.ndarray:
    if isinstance(P, PointSet):
        return P.points
    a = np.ascontiguousarray(P, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def assemble(k: Kernel, X, Y, out: np.ndarray | None = None) -> np.ndarray:
    """Dense block ``K(X, Y)``; rows follow X, columns follow Y."""
    Xc, Yc = _coords(X), _coords(Y)
    if Xc.shape[1] != Yc.shape[1]:
        raise ValueError(f"dimension mismatch: X is {Xc.shape[1]}-D, Y is {Yc.shape[1]}-D")
    n, m = Xc.shape[0], Yc.shape[0]
    if out is None:
        out = np.empty((n, m))
    if n == 0 or m == 0:
        return out
    if isinstance(k, DegenerateKernel):
        k._fill(Xc, Yc, out)
        return out
    best, i, j = _backend.assemble_raw(k._code, Xc, Yc, out)
    if k.singular_on_diagonal and best < COINCIDENT_TOL ** 2:
        raise CoincidentPointsError(i, j, float(np.sqrt(best)))
    return out


def assemble_self(k: Kernel, X) -> np.ndarray:
    """``K(X, X)`` with the diagonal set to zero for singular kernels.

    Distinct but coincident points are still rejected.
    """
    Xc = _coords(X)
    if not k.singular_on_diagonal:
        return assemble(k, Xc, Xc)
    n = Xc.shape[0]
    out = np.empty((n, n))
    if n == 0:
        return out
    _backend.assemble_raw(k._code, Xc, Xc, out)
    np.fill_diagonal(out, 0.0)
    bad = ~np.isfinite(out) | (np.abs(out) > 1.0 / COINCIDENT_TOL)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise CoincidentPointsError(i, j, float(np.linalg.norm(Xc[i] - Xc[j])))
    return out


def parse_kernel(spec: str, pair: DomainPair | None = None) -> Kernel:
    """``inv-dist``, ``multiquadric`` or ``degenerate:r=<r>:seed=<s>``."""
    head, *opts = spec.strip().split(":")
    if head in ("inv-dist", "inverse-distance", "k1"):
        return InverseDistance()
    if head in ("multiquadric", "k2"):
        return Multiquadric()
    if head == "degenerate":
        kv = dict(o.split("=", 1) for o in opts)
        if pair is None:
            raise ValueError("a degenerate kernel needs a domain pair")
        seed = int(kv["seed"]) if "seed" in kv else None
        return make_degenerate(pair, int(kv.get("r", 1)), seed)
    raise ValueError(f"unknown kernel {spec!r}")
