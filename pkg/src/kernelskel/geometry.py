"""Boxes, shell regions, domain pairs and deterministic point generation.

All geometry objects are immutable. Coordinates are stored as tuples so the
objects hash, which the proxy cache relies on.

Random sampling uses numpy's ``Philox`` counter-based generator seeded
explicitly, so a given ``(n, seed)`` yields bit-identical points everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np

# relative slack for boundary tests; grid points produced by linspace can land
# a few ulps off a face
_BTOL = 1e-12


class Admissibility(str, Enum):
    STRONG = "strong"
    WEAK = "weak"


def _as_kind(kind) -> Admissibility:
    try:
        return Admissibility(kind)
    except ValueError:
        raise ValueError(f"unknown admissibility {kind!r}") from None


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]`` in R^d, d in {1, 2, 3}."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("box corners have different dimensions")
        if len(lo) not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {len(lo)}")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ValueError("box corners must be finite")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, half: float, dim: int, center=None) -> "Box":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(tuple(c - half), tuple(c + half))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    @property
    def edges(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.edges))

    @property
    def diam(self) -> float:
        """Max-norm diameter (longest edge)."""
        return float(self.edges.max())

    def _tol(self) -> float:
        return _BTOL * max(1.0, float(np.abs(np.r_[self.lo, self.hi]).max()))

    def contains(self, pts) -> np.ndarray:
        """Closed-box membership, one bool per row of ``pts``."""
        pts = np.atleast_2d(pts)
        t = self._tol()
        return np.all((pts >= np.array(self.lo) - t) & (pts <= np.array(self.hi) + t), axis=1)

    def interior_contains(self, pts) -> np.ndarray:
        """Open-box membership (points on a face are excluded)."""
        pts = np.atleast_2d(pts)
        t = self._tol()
        return np.all((pts > np.array(self.lo) + t) & (pts < np.array(self.hi) - t), axis=1)

    def contains_box(self, other: "Box") -> bool:
        t = self._tol()
        return all(a - t <= b for a, b in zip(self.lo, other.lo)) and all(
            b <= a + t for a, b in zip(self.hi, other.hi))

    def translate(self, shift) -> "Box":
        s = np.asarray(shift, dtype=float)
        _check_dim(self.dim, s.size)
        return Box(tuple(np.array(self.lo) + s), tuple(np.array(self.hi) + s))

    def gap(self, other: "Box") -> np.ndarray:
        """Per-axis separation (zero where the projections overlap)."""
        _check_dim(self.dim, other.dim)
        a_lo, a_hi = np.array(self.lo), np.array(self.hi)
        b_lo, b_hi = np.array(other.lo), np.array(other.hi)
        return np.maximum(0.0, np.maximum(b_lo - a_hi, a_lo - b_hi))

    def faces(self):
        """Yield ``(axis, value)`` for the 2d faces of the box."""
        for k in range(self.dim):
            yield k, self.lo[k]
            yield k, self.hi[k]


@dataclass(frozen=True)
class ShellRegion:
    """``outer`` minus the open interior of ``inner``.

    ``inner == outer`` is allowed and gives an empty region (``is_empty``);
    point generation on it is an error.
    """

    outer: Box
    inner: Box

    def __post_init__(self):
        _check_dim(self.outer.dim, self.inner.dim)
        if not self.outer.contains_box(self.inner):
            raise ValueError("inner box must lie inside the outer box")

    @property
    def dim(self) -> int:
        return self.outer.dim

    @property
    def is_empty(self) -> bool:
        return self.inner.contains_box(self.outer)

    @property
    def volume(self) -> float:
        return self.outer.volume - self.inner.volume

    def contains(self, pts) -> np.ndarray:
        return self.outer.contains(pts) & ~self.inner.interior_contains(pts)

    def on_inner_boundary(self, pts) -> np.ndarray:
        return self.inner.contains(pts) & ~self.inner.interior_contains(pts)

    def translate(self, shift) -> "ShellRegion":
        return ShellRegion(self.outer.translate(shift), self.inner.translate(shift))


Region = Union[Box, ShellRegion]


@dataclass(frozen=True)
class DomainPair:
    """Source box and far-field shell of one compression problem.

    ``target.inner`` encloses ``source``; for weak pairs it may coincide with it.
    Strong pairs are checked against ``diam <= eta * dist`` using max-norm
    diameter and distance.
    """

    source: Box
    target: ShellRegion
    admissibility: Admissibility = Admissibility.STRONG
    eta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "admissibility", _as_kind(self.admissibility))
        _check_dim(self.source.dim, self.target.dim)
        if not self.target.inner.contains_box(self.source):
            raise ValueError("source box overlaps the far-field region")
        if self.admissibility is Admissibility.STRONG and not self.target.is_empty:
            if min(self.source.diam, self.target.outer.diam) > self.eta * self.distance * (1 + 1e-12):
                raise ValueError(
                    f"pair is not strongly admissible for eta={self.eta} "
                    f"(diam={self.source.diam}, dist={self.distance})")

    @property
    def dim(self) -> int:
        return self.source.dim

    @property
    def distance(self) -> float:
        """Max-norm distance from the source box to the shell."""
        s, i = self.source, self.target.inner
        gaps = np.r_[np.array(s.lo) - np.array(i.lo), np.array(i.hi) - np.array(s.hi)]
        return float(max(0.0, gaps.min()))

    @property
    def is_empty(self) -> bool:
        return self.target.is_empty

    def translate(self, shift) -> "DomainPair":
        return DomainPair(self.source.translate(shift), self.target.translate(shift),
                          self.admissibility, self.eta)

    def centered(self) -> tuple["DomainPair", np.ndarray]:
        """The pair moved so the source center sits at the origin, and the shift used."""
        shift = -self.source.center
        return self.translate(shift), shift

    def key(self, digits: int = 10) -> tuple:
        """Translation-free hashable description of the geometry."""
        p, _ = self.centered()
        r = lambda t: tuple(round(v, digits) + 0.0 for v in t)
        return (r(p.source.lo), r(p.source.hi), r(p.target.outer.lo), r(p.target.outer.hi),
                r(p.target.inner.lo), r(p.target.inner.hi), p.admissibility.value)


def cube_pair(x_half: float, outer_half: float, inner_half: float, dim: int,
              kind="strong", eta: float = 1.0) -> DomainPair:
    """Concentric pair ``[-x,x]^d`` and ``[-outer,outer]^d \\ [-inner,inner]^d``."""
    return DomainPair(Box.cube(x_half, dim),
                      ShellRegion(Box.cube(outer_half, dim), Box.cube(inner_half, dim)),
                      kind, eta)


def far_apart_pair(dim: int) -> DomainPair:
    return cube_pair(1.0, 9.0, 3.0, dim, "strong")


def nearby_pair(dim: int) -> DomainPair:
    return cube_pair(1.0, 9.0, 1.1, dim, "weak")


@dataclass(frozen=True, eq=False)
class PointSet:
    """Ordered points, one per row; positions are identities for skeletons."""

    points: np.ndarray
    provenance: str = "unknown"

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64, order="C")
        if p.ndim == 1:
            p = p.reshape(-1, 1) if p.size else p.reshape(0, 1)
        if p.ndim != 2 or p.shape[1] not in (1, 2, 3):
            raise ValueError(f"points must be (n, d) with d in 1..3, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("points must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __getitem__(self, idx) -> "PointSet":
        if not isinstance(idx, slice):
            idx = np.atleast_1d(idx)
        return PointSet(self.points[idx], self.provenance)

    def translate(self, shift) -> "PointSet":
        return translate(self, shift)


# ---------------------------------------------------------------- sampling modes

@dataclass(frozen=True)
class RandomUniform:
    n: int
    seed: int = 0


@dataclass(frozen=True)
class GridApprox:
    n: int


@dataclass(frozen=True)
class SurfaceGrid:
    n: int


@dataclass(frozen=True)
class AdaptiveGrid:
    n: int
    near_fraction: float = 0.5
    near_band: Box | None = None


def rng(seed: int) -> np.random.Generator:
    """The documented generator: Philox-4x64 counter-based, explicit seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _check_dim(a: int, b: int):
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


def _region_box(region: Region) -> Box:
    return region.outer if isinstance(region, ShellRegion) else region


def _membership(region: Region, pts: np.ndarray) -> np.ndarray:
    return region.contains(pts)


def _axis_nodes(lo: float, hi: float, m: int) -> np.ndarray:
    if m == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, m)


def _aligned_axis(breaks, h: float) -> np.ndarray:
    """Nodes with spacing about ``h`` that include every breakpoint."""
    out = [np.array([breaks[0]])]
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = max(1, math.ceil((b - a) / h - 1e-9))
        out.append(np.linspace(a, b, m + 1)[1:])
    return np.concatenate(out)


def _tensor_grid(box: Box, counts) -> np.ndarray:
    axes = [_axis_nodes(l, h, int(m)) for l, h, m in zip(box.lo, box.hi, counts)]
    return _mesh(axes)


def _mesh(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _grid_approx(region: Region, n: int, keep=None) -> np.ndarray:
    """Smallest uniform grid with at least ``n`` points in ``region``.

    On a shell the grid lines pass through the inner box's faces, so the
    inner boundary (the part of the far field closest to the source) is sampled.
    """
    box = _region_box(region)
    keep = keep or (lambda p: _membership(region, p))
    d = box.dim
    breaks = None
    if isinstance(region, ShellRegion):
        breaks = [sorted({box.lo[k], region.inner.lo[k], region.inner.hi[k], box.hi[k]})
                  for k in range(d)]
    # start coarse: per-segment rounding can add many points, and the scan only refines
    target = 0.25 * n * box.volume / region.volume
    for _ in range(1000):
        h = (box.volume / target) ** (1.0 / d)
        if breaks is None:
            counts = [max(1, math.ceil(e / h - 1e-9)) for e in box.edges]
            pts = _tensor_grid(box, counts)
        else:
            pts = _mesh([_aligned_axis(b, h) for b in breaks])
        pts = pts[keep(pts)]
        if len(pts) >= n:
            return pts
        target *= 1.01
    raise RuntimeError("grid refinement did not reach the requested count")


def _surface_grid(shell: ShellRegion, n: int) -> np.ndarray:
    inner = shell.inner
    d = inner.dim
    nfaces = 2 * d
    if d == 1 and n > 2:
        raise ValueError("a 1-D inner boundary has only two points")
    per = [n // nfaces + (1 if f < n % nfaces else 0) for f in range(nfaces)]
    out = []
    for (axis, value), p in zip(inner.faces(), per):
        if p == 0:
            continue
        other = [k for k in range(d) if k != axis]
        if d == 1:
            face = np.empty((1, 0))
        elif d == 2:
            k = other[0]
            face = (inner.lo[k] + (np.arange(p) + 0.5) * (inner.hi[k] - inner.lo[k]) / p)[:, None]
        else:
            q = math.ceil(math.sqrt(p))
            k1, k2 = other
            a = inner.lo[k1] + (np.arange(q) + 0.5) * (inner.hi[k1] - inner.lo[k1]) / q
            b = inner.lo[k2] + (np.arange(q) + 0.5) * (inner.hi[k2] - inner.lo[k2]) / q
            A, B = np.meshgrid(a, b, indexing="ij")
            cells = np.stack([A.ravel(), B.ravel()], axis=1)
            pick = np.round(np.linspace(0, q * q - 1, p)).astype(int)
            face = cells[pick]
        pts = np.empty((face.shape[0], d))
        pts[:, axis] = value
        for j, k in enumerate(other):
            pts[:, k] = face[:, j]
        out.append(pts)
    return np.concatenate(out, axis=0)


def _random_uniform(region: Region, n: int, seed: int) -> np.ndarray:
    box = _region_box(region)
    g = rng(seed)
    lo, edges = np.array(box.lo), box.edges
    frac = region.volume / box.volume
    chunks, have = [], 0
    while have < n:
        batch = max(64, int(1.2 * (n - have) / frac) + 16)
        cand = lo + g.random((batch, box.dim)) * edges
        cand = cand[_membership(region, cand)]
        chunks.append(cand)
        have += len(cand)
    return np.concatenate(chunks)[:n]


def generate_points(region: Region, mode) -> PointSet:
    """Points in ``region`` per ``mode``.

    ``RandomUniform`` and ``SurfaceGrid`` return exactly ``n`` points;
    ``GridApprox`` and ``AdaptiveGrid`` return the smallest grid they reach with
    at least ``n`` members.
    """
    n = mode.n
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(region, ShellRegion) and region.is_empty:
        raise ValueError("empty region: inner box fills the outer box")
    if isinstance(mode, RandomUniform):
        return PointSet(_random_uniform(region, n, mode.seed), f"random(seed={mode.seed})")
    if isinstance(mode, GridApprox):
        return PointSet(_grid_approx(region, n), "grid")
    if isinstance(mode, SurfaceGrid):
        if not isinstance(region, ShellRegion):
            raise ValueError("SurfaceGrid needs a ShellRegion (grid lies on its inner boundary)")
        return PointSet(_surface_grid(region, n), "surface-grid")
    if isinstance(mode, AdaptiveGrid):
        if not isinstance(region, ShellRegion):
            raise ValueError("AdaptiveGrid needs a ShellRegion")
        band = mode.near_band
        if band is None:
            raise ValueError("AdaptiveGrid needs a near_band box")
        _check_dim(band.dim, region.dim)
        if not (band.contains_box(region.inner) and region.outer.contains_box(band)):
            raise ValueError("near band must sit between the inner and outer boxes")
        if not 0.0 < mode.near_fraction < 1.0:
            raise ValueError("near_fraction must lie in (0, 1)")
        n_near = max(1, int(round(n * mode.near_fraction)))
        n_far = max(1, n - n_near)
        near_shell = ShellRegion(band, region.inner)
        near = _grid_approx(near_shell, n_near,
                            keep=lambda p: band.interior_contains(p) & near_shell.contains(p))
        far = _grid_approx(ShellRegion(region.outer, band), n_far)
        return PointSet(np.concatenate([near, far]), "adaptive-grid")
    raise TypeError(f"unknown sampling mode {mode!r}")


def translate(ps: PointSet, shift) -> PointSet:
    s = np.asarray(shift, dtype=float).ravel()
    _check_dim(ps.dim, s.size)
    return PointSet(ps.points + s, ps.provenance)


def admissible(a: Box, b: Box, kind="strong", eta: float | None = None) -> bool:
    """Admissibility of two boxes.

    ``strong`` without ``eta``: the tree rule, true iff the (equal-sized) boxes
    are separated by at least one box width in max-norm. ``strong`` with
    ``eta``: ``min(diam) <= eta * dist``. ``weak``: interiors are disjoint.
    """
    kind = _as_kind(kind)
    _check_dim(a.dim, b.dim)
    gap = a.gap(b)
    tol = _BTOL * max(1.0, a.diam, b.diam)
    if kind is Admissibility.WEAK:
        if np.any(gap > 0):
            return True
        # touching along one axis still leaves disjoint interiors
        a_lo, a_hi, b_lo, b_hi = map(np.array, (a.lo, a.hi, b.lo, b.hi))
        return bool(np.any((a_hi <= b_lo + tol) | (b_hi <= a_lo + tol)))
    if eta is not None:
        dist = float(gap.max())
        return min(a.diam, b.diam) <= eta * dist * (1 + 1e-12) and dist > 0
    if not np.allclose(a.edges, b.edges, rtol=1e-9):
        raise ValueError("tree admissibility needs boxes of equal size")
    return bool(gap.max() >= a.edges.max() - tol)


# ------------------------------------------------------------------- file I/O

def write_points(path, ps: PointSet) -> None:
    """Plain text, header ``# dim=<d> count=<n>``, one point per line."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# dim={ps.dim} count={len(ps)}\n")
        for row in ps.points:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_points(path) -> PointSet:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# dim=<d> count=<n>' header")
        fields = dict(tok.split("=", 1) for tok in header[1:].split() if "=" in tok)
        try:
            dim, count = int(fields["dim"]), int(fields["count"])
        except (KeyError, ValueError):
            raise ValueError(f"{path}: malformed header {header!r}") from None
        rows = [line.split() for line in fh if line.strip() and not line.startswith("#")]
    if len(rows) != count:
        raise ValueError(f"{path}: header says {count} points, found {len(rows)}")
    pts = np.array(rows, dtype=float).reshape(count, dim) if count else np.zeros((0, dim))
    if any(len(r) != dim for r in rows):
        raise ValueError(f"{path}: expected {dim} fields per line")
    return PointSet(pts, "file")
