"""Proxy-point selection: random, surface, and ID-based selection from grids.

ID selection assembles K(X_d, Y_d) on uniform grids and keeps the Y_d points
picked by a threshold sRRQR of the block's columns; the threshold estimates
the numerical rank of the kernel over the domain pair. Selected sets depend
only on the kernel and the pair geometry, so a :class:`ProxyCache` shares
one selection among all pairs that differ by a translation.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (AdaptiveGrid, Box, DomainPair, GridApprox, PointSet, RandomUniform,
                       ShellRegion, SurfaceGrid, generate_points)
from .kernels import Kernel, assemble
from .linalg import EPS, Threshold, id_rows

# refuse candidate blocks larger than this many entries (1.6 GB of float64)
MAX_CANDIDATE_ENTRIES = 200_000_000


@dataclass(frozen=True)
class Random:
    n: int
    seed: int = 0


@dataclass(frozen=True)
class Surface:
    n: int


@dataclass(frozen=True)
class IdSelectParams:
    """Settings for grid-based ID selection.

    ``threshold_floor`` is relative to the largest entry of K(X_d, Y_d): the
    sRRQR threshold is ``max(sqrt(|X_d|) * eps_mach, threshold_floor) * max|K|``.
    ``adaptive`` is ``(near_fraction, near_band)``; a ``None`` band means the
    source box grown by half an edge on every side. ``gap`` (fraction of the
    source edge) keeps candidates off a singular kernel's diagonal when the
    pair's regions touch.
    """

    xd_count: int = 1500
    yd_count: int = 15000
    threshold_floor: float = 1e-13
    refine_factor: float = 2.0
    max_rounds: int = 3
    adaptive: tuple | None = None
    gap: float | None = None
    C: float = 2.0

    def __post_init__(self):
        if self.xd_count < 1:
            raise ValueError("xd_count must be at least 1")
        if self.yd_count < self.xd_count:
            raise ValueError("yd_count must be at least xd_count")
        if not self.refine_factor > 1:
            raise ValueError("refine_factor must exceed 1")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be non-negative")
        if self.threshold_floor < 0:
            raise ValueError("threshold_floor must be non-negative")


IdSelect = IdSelectParams


class SaturationError(RuntimeError):
    """ID selection kept every candidate column; the grids are too coarse."""


@dataclass
class ProxySet:
    points: PointSet
    scheme: object
    pair: DomainPair
    diagnostics: dict = field(default_factory=dict)

    @property
    def selection_rank(self) -> int:
        return len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def translate(self, shift) -> "ProxySet":
        shift = np.asarray(shift, dtype=float)
        return ProxySet(self.points.translate(shift), self.scheme, self.pair.translate(shift),
                        dict(self.diagnostics))


def parse_scheme(text: str):
    """``id``, ``id-adaptive``, ``random:<n>`` or ``surface:<n>``."""
    head, _, arg = text.strip().partition(":")
    if head == "id":
        return IdSelectParams()
    if head == "id-adaptive":
        return IdSelectParams(adaptive=(0.5, None))
    if head == "random":
        return Random(int(arg))
    if head == "surface":
        return Surface(int(arg))
    raise ValueError(f"unknown proxy scheme {text!r}")


def default_near_band(pair: DomainPair) -> Box:
    """The source box grown by half its edge, clipped to the outer box."""
    src, outer = pair.source, pair.target.outer
    pad = 0.5 * src.edges
    lo = np.maximum(np.array(src.lo) - pad, outer.lo)
    hi = np.minimum(np.array(src.hi) + pad, outer.hi)
    return Box(tuple(lo), tuple(hi))


def select_proxy(k: Kernel, pair: DomainPair, scheme) -> ProxySet:
    """Random or Surface selection; ID parameters are forwarded to :func:`select_proxy_id`."""
    if isinstance(scheme, IdSelectParams):
        return select_proxy_id(k, pair, scheme)
    if pair.is_empty:
        raise ValueError("pair has an empty far-field region")
    if isinstance(scheme, Random):
        pts = generate_points(pair.target, RandomUniform(scheme.n, scheme.seed))
    elif isinstance(scheme, Surface):
        pts = generate_points(pair.target, SurfaceGrid(scheme.n))
    else:
        raise TypeError(f"unknown proxy scheme {scheme!r}")
    return ProxySet(pts, scheme, pair, {"candidates": [], "rounds": 0})


def _candidate_region(k: Kernel, pair: DomainPair, params: IdSelectParams) -> ShellRegion:
    shell = pair.target
    if k.singular_on_diagonal and pair.distance == 0.0:
        if params.gap is None:
            raise ValueError(
                f"{k.name} is singular where the source box touches the far field; no "
                "separable expansion exists. Use the hybrid compression, or pass a gap.")
        g = params.gap * pair.source.edges
        inner = Box(tuple(np.array(shell.inner.lo) - g), tuple(np.array(shell.inner.hi) + g))
        shell = ShellRegion(shell.outer, inner)
    return shell


def _candidates(k: Kernel, pair: DomainPair, params: IdSelectParams, n: int) -> PointSet:
    shell = _candidate_region(k, pair, params)
    if params.adaptive is None:
        return generate_points(shell, GridApprox(n))
    frac, band = params.adaptive
    band = band if band is not None else default_near_band(pair)
    return generate_points(shell, AdaptiveGrid(n, frac, band))


def select_proxy_id(k: Kernel, pair: DomainPair, params: IdSelectParams | None = None) -> ProxySet:
    """ID selection with grid refinement on saturation."""
    params = params or IdSelectParams()
    if pair.is_empty:
        raise ValueError("pair has an empty far-field region")
    t0 = time.perf_counter()
    d = pair.dim
    xn, yn = params.xd_count, params.yd_count
    rounds = []
    for rnd in range(params.max_rounds + 1):
        Xd = generate_points(pair.source, GridApprox(xn))
        Yd = _candidates(k, pair, params, yn)
        if len(Xd) * len(Yd) > MAX_CANDIDATE_ENTRIES:
            raise SaturationError(
                f"candidate block {len(Xd)}x{len(Yd)} exceeds the memory budget; "
                "use adaptive candidates or smaller initial grids")
        A = assemble(k, Xd, Yd)
        mx = float(np.abs(A).max())
        eps = max(math.sqrt(len(Xd)) * EPS, params.threshold_floor) * mx
        res = id_rows(A.T, params.C, Threshold(eps))
        rounds.append({"xd": len(Xd), "yd": len(Yd), "rank": res.rank, "threshold": eps})
        if res.rank < min(len(Xd), len(Yd)):
            diag = {"candidates": rounds, "rounds": rnd + 1,
                    "seconds": time.perf_counter() - t0}
            pts = PointSet(Yd.points[res.skeleton], "id-selection")
            return ProxySet(pts, params, pair, diag)
        grow = params.refine_factor ** d
        xn, yn = int(math.ceil(xn * grow)), int(math.ceil(yn * grow))
    raise SaturationError(
        f"ID selection kept all {rounds[-1]['rank']} candidates after {len(rounds)} rounds; "
        "use denser initial grids or adaptive candidates")


def _scheme_key(scheme):
    return (type(scheme).__name__, scheme)


class ProxyCache:
    """Proxy sets keyed by kernel, translation-free pair geometry, and scheme.

    Kernels that are not translation invariant are keyed on the exact pair.
    """

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._store)

    def get(self, k: Kernel, pair: DomainPair, scheme) -> ProxySet:
        if k.translation_invariant:
            base, shift = pair.centered()
            key = (k.key(), base.key(), _scheme_key(scheme))
        else:
            base, shift = pair, np.zeros(pair.dim)
            key = (k.key(), pair, _scheme_key(scheme))
        with self._lock:
            hit = self._store.get(key)
            if hit is not None:
                self.hits += 1
        if hit is None:
            hit = select_proxy(k, base, scheme)
            with self._lock:
                self.misses += 1
                self._store.setdefault(key, hit)
        return hit.translate(-shift) if np.any(shift) else hit


def proxy_cache_get(cache: ProxyCache, k: Kernel, pair: DomainPair, scheme) -> ProxySet:
    return cache.get(k, pair, scheme)
