"""Rasterized hulls, half-plane capacity, harmonic measure and bubbles.

Rasters live in the closed upper half-plane.  Pixel ``(i, j)`` covers
``[x0 + j eps, x0 + (j+1) eps] x [y0 + i eps, y0 + (i+1) eps]`` with row 0 at
the bottom.  When ``y0 == 0`` the real line is a wall directly below row 0.
Trace occupancy is drawn 8-connected; complements are 4-connected.

Brownian functionals are sampled with walk-on-spheres: each walker jumps to a
uniform point on the largest disk that avoids the hull and the real line.
Far from the hull the map ``u -> u + R^2/u`` sends the exterior of the
half-disk of radius ``R`` onto the half-plane, where the exit point is an
exact Cauchy draw, so walkers never need a box cut-off.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .bessel_sde import make_generator
from .errors import ParameterError, Refusal
from .stats import McEstimate

DEFAULT_PIXELS = 1024  # default eps_px = diameter / DEFAULT_PIXELS
WALKER_BLOCK = 1024  # walkers sharing one RNG stream
MAX_WALKER_STEPS = 100_000
MAX_LOSS_FRACTION = 0.01
BRUTE_DIAMETER_MAX = 1000

_EXIT_LOST, _EXIT_REAL, _EXIT_HULL = -1, 0, 1


# -- rasters ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HullRaster:
    """Occupancy bitmap on a square grid anchored at ``origin`` (lower-left corner)."""

    origin: complex
    eps: float
    bitmap: np.ndarray
    polyline: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ParameterError("pixel size must be positive")
        if self.origin.imag < 0:
            raise ParameterError("rasters live in the closed upper half-plane")
        b = np.array(self.bitmap, dtype=bool)
        if b.ndim != 2:
            raise ParameterError("bitmap must be 2-D")
        b.setflags(write=False)
        object.__setattr__(self, "origin", complex(self.origin))
        object.__setattr__(self, "bitmap", b)
        if self.polyline is not None:
            p = np.array(self.polyline, dtype=complex)
            p.setflags(write=False)
            object.__setattr__(self, "polyline", p)

    @property
    def shape(self):
        return self.bitmap.shape

    @property
    def touches_real_line(self) -> bool:
        return self.origin.imag == 0.0

    @property
    def is_empty(self) -> bool:
        return not self.bitmap.any()

    @property
    def area(self) -> float:
        return float(self.bitmap.sum()) * self.eps**2

    @property
    def bbox(self):
        """Tight ``(xmin, ymin, xmax, ymax)`` of the occupied pixels, or None."""
        if self.is_empty:
            return None
        rows = np.nonzero(self.bitmap.any(axis=1))[0]
        cols = np.nonzero(self.bitmap.any(axis=0))[0]
        x0, y0, e = self.origin.real, self.origin.imag, self.eps
        return (x0 + cols[0] * e, y0 + rows[0] * e, x0 + (cols[-1] + 1) * e, y0 + (rows[-1] + 1) * e)

    def with_bitmap(self, bitmap) -> "HullRaster":
        return HullRaster(self.origin, self.eps, bitmap, self.polyline)

    def centres(self, mask=None) -> np.ndarray:
        """Complex pixel centres of ``mask`` (default: occupied pixels)."""
        rows, cols = np.nonzero(self.bitmap if mask is None else mask)
        return (self.origin.real + (cols + 0.5) * self.eps) + 1j * (self.origin.imag + (rows + 0.5) * self.eps)

    def contains(self, z) -> np.ndarray:
        """True where ``z`` falls in an occupied pixel."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        j = np.floor((z.real - self.origin.real) / self.eps).astype(np.int64)
        i = np.floor((z.imag - self.origin.imag) / self.eps).astype(np.int64)
        ny, nx = self.shape
        ok = (i >= 0) & (i < ny) & (j >= 0) & (j < nx)
        out = np.zeros(z.shape, dtype=bool)
        out[ok] = self.bitmap[i[ok], j[ok]]
        return out

    def to_pgm(self, path) -> None:
        """Binary PGM (P5), top row first, occupied pixels 255."""
        ny, nx = self.shape
        img = np.where(self.bitmap[::-1], 255, 0).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
            fh.write(img.tobytes())

    @classmethod
    def from_pgm(cls, path, origin: complex = 0j, eps: float = 1.0) -> "HullRaster":
        with open(path, "rb") as fh:
            data = fh.read()
        parts = data.split(maxsplit=4)
        if parts[0] != b"P5":
            raise ParameterError("not a binary PGM file")
        nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
        img = np.frombuffer(parts[4], dtype=np.uint8, count=nx * ny).reshape(ny, nx)
        return cls(origin, eps, img[::-1] > maxval // 2)


@numba.njit(cache=True)
def _label_kernel(xs, ys, x0, y0, eps, nx, ny, sentinel):
    labels = np.full((ny, nx), sentinel, dtype=np.int64)
    n = xs.shape[0]
    for k in range(n):
        if k == 0:
            ax, ay = xs[0], ys[0]
            m = 0
        else:
            ax, ay = xs[k - 1], ys[k - 1]
            m = int(math.ceil(2.0 * math.hypot(xs[k] - ax, ys[k] - ay) / eps))
        for s in range(m + 1):
            f = s / m if m > 0 else 1.0
            x = ax + f * (xs[k] - ax)
            y = ay + f * (ys[k] - ay)
            j = min(max(int(math.floor((x - x0) / eps)), 0), nx - 1)
            i = min(max(int(math.floor((y - y0) / eps)), 0), ny - 1)
            if labels[i, j] > k:
                labels[i, j] = k
    return labels


def _frame(points: np.ndarray, eps: Optional[float]):
    if eps is None:
        d = segment_diameter(points)
        eps = d / DEFAULT_PIXELS if d > 0 else 1e-3
    xs = points.real
    ys = np.maximum(points.imag, 0.0)
    x0 = math.floor(xs.min() / eps) * eps
    y0 = math.floor(ys.min() / eps) * eps
    if ys.min() < eps:
        y0 = 0.0
    nx = int(math.floor((xs.max() - x0) / eps)) + 1
    ny = int(math.floor((ys.max() - y0) / eps)) + 1
    return eps, x0, y0, nx, ny, xs, ys


def label_polyline_raster(points, eps: Optional[float] = None):
    """Rasterize a polyline, labelling each pixel with the first segment index reaching it.

    Returns ``(labels, raster)``; unvisited pixels carry a label larger than
    any index.  Segment ``k`` joins ``points[k-1]`` and ``points[k]``.
    """
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    if pts.size == 0:
        raise ParameterError("empty polyline")
    eps, x0, y0, nx, ny, xs, ys = _frame(pts, eps)
    if nx * ny > 64_000_000:
        raise Refusal(f"raster of {nx}x{ny} pixels is too large")
    sentinel = pts.size + 1
    labels = _label_kernel(np.ascontiguousarray(xs), np.ascontiguousarray(ys), x0, y0, eps, nx, ny, sentinel)
    return labels, HullRaster(complex(x0, y0), eps, labels < sentinel, xs + 1j * ys)


def rasterize_polyline(points, eps: Optional[float] = None) -> HullRaster:
    """8-connected occupancy raster of a polyline; default pixel = diameter/1024."""
    return label_polyline_raster(points, eps)[1]


def fill_hull(raster: HullRaster) -> HullRaster:
    """Add every bounded 4-connected complementary component to the occupancy."""
    b = raster.bitmap
    if b.size == 0:
        return raster
    if raster.touches_real_line:
        # real line is a wall below row 0; escape only left, right and up
        padded = np.zeros((b.shape[0] + 2, b.shape[1] + 2), dtype=bool)
        padded[0, :] = True
        padded[1:-1, 1:-1] = b
        filled = ndimage.binary_fill_holes(padded)[1:-1, 1:-1]
    else:
        filled = ndimage.binary_fill_holes(np.pad(b, 1))[1:-1, 1:-1]
    return raster.with_bitmap(filled)


def close_gaps(raster: HullRaster, radius_px: int) -> HullRaster:
    """Morphological closing with a disk of ``radius_px`` pixels.

    Seals gaps narrower than about ``2 * radius_px`` pixels, including gaps
    between the occupancy and the real line.
    """
    if radius_px <= 0:
        return raster
    r = int(radius_px)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = xx * xx + yy * yy <= r * r
    p = r + 1
    b = np.pad(raster.bitmap, p)
    if raster.touches_real_line:
        b[:p, :] = True
    closed = ndimage.binary_closing(b, structure=disk)
    return raster.with_bitmap(closed[p:-p, p:-p] | raster.bitmap)


# -- fixtures --------------------------------------------------------------

def fixture(kind: str, size: float = 1.0, eps: Optional[float] = None, inner: float = 0.5) -> HullRaster:
    """Closed-form test hulls.

    ``slit``: vertical segment ``[0, i size]``; ``half_disk``: radius
    ``size`` centred at 0; ``rectangle``: ``[-size/2, size/2] x [0, size]``;
    ``disk`` and ``annulus`` (inner radius ``inner * size``) float above the
    real line, centred at ``2 i size``.
    """
    eps = size / DEFAULT_PIXELS if eps is None else eps
    if kind == "slit":
        n = max(1, int(round(size / eps)))
        return HullRaster(complex(-eps / 2, 0), eps, np.ones((n, 1), dtype=bool))
    m = int(math.ceil(size / eps))
    if kind == "half_disk":
        ii, jj = np.mgrid[0:m, -m:m]
        c = (jj + 0.5) * eps + 1j * (ii + 0.5) * eps
        return HullRaster(complex(-m * eps, 0), eps, np.abs(c) < size)
    if kind == "rectangle":
        n = max(1, int(round(size / eps)))
        return HullRaster(complex(-n * eps / 2, 0), eps, np.ones((n, n), dtype=bool))
    if kind in ("disk", "annulus"):
        # odd grid so that the centre 2i sits on a pixel centre
        ii, jj = np.mgrid[-m:m + 1, -m:m + 1]
        r = np.hypot(jj * eps, ii * eps)
        mask = r < size
        if kind == "annulus":
            mask &= r >= inner * size
        return HullRaster(complex(-(m + 0.5) * eps, 2 * size - (m + 0.5) * eps), eps, mask)
    raise ParameterError(f"unknown fixture {kind!r}")


# -- walk-on-spheres -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _WalkerField:
    dist: np.ndarray  # pixel-unit distance from each cell centre to the nearest occupied centre
    x0: float
    y0: float
    eps: float
    c: float  # centre of the enclosing half-disk
    R: float
    empty: bool
    # segments crossing each cell (CSR), used for exact distances to a source polyline
    cell_start: np.ndarray
    cell_segs: np.ndarray
    px: np.ndarray
    py: np.ndarray


@numba.njit(cache=True)
def _segment_cells(px, py, x0, y0, eps, nx, ny):
    # (cell, segment) incidences of a densely sampled polyline, deduplicated per segment
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    last = np.full(nx * ny, -1, dtype=np.int64)
    for pass_ in range(2):
        if pass_ == 1:
            start = np.zeros(nx * ny + 1, dtype=np.int64)
            for q in range(nx * ny):
                start[q + 1] = start[q] + counts[q]
            segs = np.empty(start[-1], dtype=np.int64)
            fill = start[:-1].copy()
            last[:] = -1
        for k in range(1, px.shape[0]):
            ax, ay = px[k - 1], py[k - 1]
            m = int(math.ceil(2.0 * math.hypot(px[k] - ax, py[k] - ay) / eps))
            for s in range(m + 1):
                f = s / m if m > 0 else 1.0
                j = int(math.floor((ax + f * (px[k] - ax) - x0) / eps))
                i = int(math.floor((ay + f * (py[k] - ay) - y0) / eps))
                if i < 0 or i >= ny or j < 0 or j >= nx:
                    continue
                q = i * nx + j
                if last[q] == k:
                    continue
                last[q] = k
                if pass_ == 0:
                    counts[q] += 1
                else:
                    segs[fill[q]] = k
                    fill[q] += 1
    return start, segs


def _walker_field(raster: Optional[HullRaster]) -> _WalkerField:
    none_i = np.zeros(1, dtype=np.int64)
    none_f = np.zeros(0)
    if raster is None or raster.is_empty:
        return _WalkerField(np.zeros((1, 1)), 0.0, 0.0, 1.0, 0.0, 1.0, True,
                            none_i, none_i, none_f, none_f)
    pad = 4
    b = raster.bitmap
    bottom = 0 if raster.touches_real_line else min(pad, int(raster.origin.imag / raster.eps))
    grid = np.zeros((b.shape[0] + bottom + pad, b.shape[1] + 2 * pad), dtype=bool)
    grid[bottom:bottom + b.shape[0], pad:pad + b.shape[1]] = b
    dist = ndimage.distance_transform_edt(~grid)
    x0 = raster.origin.real - pad * raster.eps
    y0 = raster.origin.imag - bottom * raster.eps
    xmin, _, xmax, ymax = raster.bbox
    c = 0.5 * (xmin + xmax)
    R = 1.01 * math.hypot(0.5 * (xmax - xmin), ymax) + raster.eps
    if raster.polyline is not None and raster.polyline.size > 1:
        px = np.ascontiguousarray(raster.polyline.real)
        py = np.ascontiguousarray(raster.polyline.imag)
        start, segs = _segment_cells(px, py, x0, y0, raster.eps, grid.shape[1], grid.shape[0])
    else:
        px = py = none_f
        start, segs = none_i, none_i
    return _WalkerField(np.ascontiguousarray(dist), x0, y0, raster.eps, c, R, False, start, segs, px, py)


@numba.njit(cache=True, inline="always")
def _hull_distance(x, y, f_dist, x0, y0, eps, empty, cell_start, cell_segs, px, py):
    # lower bound on the distance from (x, y) to the hull; exact near it
    if empty:
        return np.inf
    dist = f_dist
    ny, nx = dist.shape
    j = int(math.floor((x - x0) / eps))
    i = int(math.floor((y - y0) / eps))
    if 0 <= i < ny and 0 <= j < nx:
        if dist[i, j] > 3.0:
            return (dist[i, j] - math.sqrt(2.0)) * eps
        has_curve = px.shape[0] > 0
        best = np.inf
        for a in range(max(i - 5, 0), min(i + 6, ny)):
            for b in range(max(j - 5, 0), min(j + 6, nx)):
                if dist[a, b] != 0.0:
                    continue
                q = a * nx + b
                if has_curve and cell_start[q + 1] > cell_start[q]:
                    for t in range(cell_start[q], cell_start[q + 1]):
                        k = cell_segs[t]
                        ax, ay = px[k - 1], py[k - 1]
                        dx, dy = px[k] - ax, py[k] - ay
                        L = dx * dx + dy * dy
                        u = 0.0 if L == 0.0 else min(max(((x - ax) * dx + (y - ay) * dy) / L, 0.0), 1.0)
                        dd = math.hypot(x - ax - u * dx, y - ay - u * dy)
                        if dd < best:
                            best = dd
                else:
                    # solid pixel (filled interior or plain raster)
                    ddx = max(x0 + b * eps - x, 0.0, x - x0 - (b + 1) * eps)
                    ddy = max(y0 + a * eps - y, 0.0, y - y0 - (a + 1) * eps)
                    dd = math.hypot(ddx, ddy)
                    if dd < best:
                        best = dd
        return best
    jc = min(max(j, 0), nx - 1)
    ic = min(max(i, 0), ny - 1)
    qx = min(max(x, x0), x0 + nx * eps)
    qy = min(max(y, y0), y0 + ny * eps)
    out = math.hypot(x - qx, y - qy)
    inner = (dist[ic, jc] - math.sqrt(2.0)) * eps - out
    return max(out, inner)


@numba.njit(cache=True, nogil=True)
def _walk_block(gen, n, start_x, start_y, from_infinity, dist, x0, y0, eps, c, R, empty,
                cell_start, cell_segs, px, py, tol, max_steps):
    ex = np.empty(n)
    ey = np.empty(n)
    kind = np.empty(n, dtype=np.int64)
    for w in range(n):
        if from_infinity:
            th = math.acos(1.0 - 2.0 * gen.random())
            x = c + R * math.cos(th)
            y = R * math.sin(th)
        else:
            x = start_x
            y = start_y
        kind[w] = -1
        for _ in range(max_steps):
            ux = x - c
            if ux * ux + y * y > 4.0 * R * R:
                # exact exit law of the exterior of the half-disk via u + R^2/u
                m2 = ux * ux + y * y
                wx = ux + R * R * ux / m2
                wy = y - R * R * y / m2
                X = wx + wy * math.tan(math.pi * (gen.random() - 0.5))
                if abs(X) <= 2.0 * R:
                    th = math.acos(X / (2.0 * R))
                    x = c + R * math.cos(th)
                    y = R * math.sin(th)
                    continue
                s = 1.0 if X > 0 else -1.0
                x = c + 0.5 * (X + s * math.sqrt(X * X - 4.0 * R * R))
                y = 0.0
                kind[w] = 0
                break
            dk = _hull_distance(x, y, dist, x0, y0, eps, empty, cell_start, cell_segs, px, py)
            d = min(y, dk)
            if d < tol:
                kind[w] = 0 if y <= dk else 1
                if kind[w] == 0:
                    y = 0.0
                break
            phi = 2.0 * math.pi * gen.random()
            x += d * math.cos(phi)
            y += d * math.sin(phi)
        ex[w] = x
        ey[w] = y
    return ex, ey, kind


def _run_walkers(field_: _WalkerField, n: int, seed: int, start: Optional[complex], threads: int,
                 stream_offset: int = 0, max_steps: int = MAX_WALKER_STEPS):
    if n < 1:
        raise ParameterError("need at least one walker")
    blocks = [(b, min(WALKER_BLOCK, n - b * WALKER_BLOCK)) for b in range(-(-n // WALKER_BLOCK))]
    tol = 0.05 * field_.eps if not field_.empty else 1e-9 * max(1.0, abs(start or 1.0))
    sx = 0.0 if start is None else start.real
    sy = 0.0 if start is None else start.imag

    def one(block):
        b, m = block
        gen = make_generator(seed, stream_offset + b)
        return _walk_block(gen, m, sx, sy, start is None, field_.dist, field_.x0, field_.y0,
                           field_.eps, field_.c, field_.R, field_.empty, field_.cell_start,
                           field_.cell_segs, field_.px, field_.py, tol, max_steps)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, blocks))
    else:
        parts = [one(b) for b in blocks]
    ex = np.concatenate([p[0] for p in parts])
    ey = np.concatenate([p[1] for p in parts])
    kind = np.concatenate([p[2] for p in parts])
    return ex + 1j * ey, kind


def estimate_hcap(hull: HullRaster, y0: Optional[float] = None, n: int = 10_000, seed: int = 0,
                  threads: int = 1, stream_offset: int = 0) -> McEstimate:
    """Monte-Carlo half-plane capacity ``lim y E_{iy}[Im B_tau]``.

    With ``y0=None`` walkers start from infinity: the first hit of the
    half-circle of radius ``R`` around the hull has density
    ``sin(theta)/2`` and the estimate is ``(4R/pi) E[Im B_tau]``, so there
    is no finite-start bias.  A finite ``y0`` starts walkers at ``c + i y0``
    and returns ``y0 E[Im B_tau]``.  Each block of 1024 walkers draws from its
    own stream, so the result does not depend on ``threads``.
    """
    f = _walker_field(hull)
    if f.empty:
        return McEstimate(0.0, 0.0, n, seed)
    if y0 is not None and not y0 > 0:
        raise ParameterError("y0 must be positive")
    start = None if y0 is None else complex(f.c, y0)
    exits, kind = _run_walkers(f, n, seed, start, threads, stream_offset)
    lost = int(np.sum(kind == _EXIT_LOST))
    if lost > MAX_LOSS_FRACTION * n:
        raise Refusal(f"{lost} of {n} walkers exhausted the step budget")
    scale = 4.0 * f.R / math.pi if y0 is None else y0
    vals = np.where(kind == _EXIT_HULL, exits.imag, 0.0)[kind != _EXIT_LOST]
    return McEstimate.from_samples(vals, seed=seed, lost=lost, scale=scale)


def real_segment(a: float, b: float) -> Callable:
    """Target predicate: exit on the real interval ``[a, b]``."""
    return lambda z, on_hull: (~on_hull) & (z.real >= a) & (z.real <= b)


def hull_boundary(z, on_hull):
    """Target predicate: exit on the hull."""
    return on_hull


def entire_boundary(z, on_hull):
    """Target predicate: any exit."""
    return np.ones(z.shape, dtype=bool)


def harmonic_measure(domain: Optional[HullRaster], start: complex, target: Callable, n: int = 10_000,
                     seed: int = 0, threads: int = 1) -> McEstimate:
    """Fraction of walkers from ``start`` whose exit from ``H \\ hull`` satisfies ``target``.

    ``domain=None`` means the empty hull.  ``target(z, on_hull)`` receives
    the exit points and a mask of hull exits.
    """
    start = complex(start)
    if start.imag <= 0:
        raise ParameterError("start must lie in the open upper half-plane")
    if domain is not None and domain.contains(start)[0]:
        raise ParameterError("start lies inside an occupied pixel")
    f = _walker_field(domain)
    exits, kind = _run_walkers(f, n, seed, start, threads)
    lost = int(np.sum(kind == _EXIT_LOST))
    if lost > MAX_LOSS_FRACTION * n:
        raise Refusal(f"{lost} of {n} walkers exhausted the step budget")
    ok = kind != _EXIT_LOST
    hits = np.asarray(target(exits[ok], kind[ok] == _EXIT_HULL), dtype=float)
    return McEstimate.from_samples(hits, seed=seed, lost=lost)


# -- diameters and bubbles -------------------------------------------------

@numba.njit(cache=True)
def _brute_diameter(x, y):
    best = 0.0
    for i in range(x.shape[0]):
        for j in range(i + 1, x.shape[0]):
            d = math.hypot(x[i] - x[j], y[i] - y[j])
            if d > best:
                best = d
    return best


def segment_diameter(points) -> float:
    """Maximal pairwise distance; exact brute force, hull-reduced above 1000 points."""
    z = np.atleast_1d(np.asarray(points, dtype=complex)).ravel()
    if z.size == 0:
        raise ParameterError("diameter of an empty set")
    if z.size > BRUTE_DIAMETER_MAX:
        xy = np.column_stack([z.real, z.imag])
        try:
            z = z[ConvexHull(xy).vertices]
        except (QhullError, ValueError):
            # degenerate (collinear) sets: the extremes along the line suffice
            d = xy - xy[0]
            u = d[np.argmax(np.hypot(d[:, 0], d[:, 1]))]
            proj = d @ u
            z = z[[int(np.argmin(proj)), int(np.argmax(proj))]]
    return float(_brute_diameter(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)))


@dataclass(frozen=True)
class Bubble:
    """One bounded complementary component.

    ``radius_px2`` is the squared pixel distance from the best centre to the
    nearest pixel outside the component (exact integer); ``radius`` converts
    it to length by subtracting half a pixel.
    """

    pixel_count: int
    diameter: float
    center: complex
    radius: float
    radius_px2: int
    touches_real_line: bool


@dataclass(frozen=True)
class BubbleReport:
    eps: float
    components: list = field(default_factory=list)

    @property
    def max_radius(self) -> float:
        return max((b.radius for b in self.components), default=0.0)

    def to_dict(self) -> dict:
        comps = []
        for b in self.components:
            d = asdict(b)
            d["center"] = [b.center.real, b.center.imag]
            comps.append(d)
        return {"eps": self.eps, "max_radius": self.max_radius, "components": comps}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def component_radius_px2(mask: np.ndarray):
    """Exact inscribed radius (squared pixel units) of one component via the EDT.

    Returns ``(r2, (row, col))`` of the first maximizer in row-major order.
    """
    padded = np.pad(mask, 1)
    d2 = np.rint(ndimage.distance_transform_edt(padded) ** 2).astype(np.int64)[1:-1, 1:-1]
    d2 = np.where(mask, d2, -1)
    k = int(np.argmax(d2))
    return int(d2.flat[k]), np.unravel_index(k, mask.shape)


def bubbles(raster: HullRaster, min_pixels: int = 1) -> BubbleReport:
    """Bounded 4-connected complementary components with diameters and inscribed disks."""
    holes = fill_hull(raster).bitmap & ~raster.bitmap
    labels, count = ndimage.label(holes)
    comps = []
    e = raster.eps
    for sl_id, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        mask = labels[sl] == sl_id
        npx = int(mask.sum())
        if npx < min_pixels:
            continue
        r2, (ri, ci) = component_radius_px2(mask)
        rows, cols = np.nonzero(mask)
        i0, j0 = sl[0].start, sl[1].start
        centres = (raster.origin.real + (cols + j0 + 0.5) * e) + 1j * (raster.origin.imag + (rows + i0 + 0.5) * e)
        centre = complex(raster.origin.real + (ci + j0 + 0.5) * e, raster.origin.imag + (ri + i0 + 0.5) * e)
        comps.append(Bubble(
            pixel_count=npx,
            diameter=segment_diameter(centres),
            center=centre,
            radius=(math.sqrt(r2) - 0.5) * e,
            radius_px2=r2,
            touches_real_line=bool(raster.touches_real_line and i0 == 0),
        ))
    return BubbleReport(e, comps)


# -- conformal distortion --------------------------------------------------

@numba.njit(cache=True)
def _polyline_distance(px, py, z):
    out = np.empty(z.shape[0])
    for m in range(z.shape[0]):
        zx, zy = z[m].real, z[m].imag
        best = np.inf
        if px.shape[0] == 1:
            best = math.hypot(zx - px[0], zy - py[0])
        for k in range(1, px.shape[0]):
            ax, ay = px[k - 1], py[k - 1]
            dx, dy = px[k] - ax, py[k] - ay
            L = dx * dx + dy * dy
            t = 0.0 if L == 0 else min(max(((zx - ax) * dx + (zy - ay) * dy) / L, 0.0), 1.0)
            d = math.hypot(zx - ax - t * dx, zy - ay - t * dy)
            if d < best:
                best = d
        out[m] = best
    return out


def distance_to_polyline(points, z) -> np.ndarray:
    """Euclidean distance from each ``z`` to the polyline through ``points``."""
    p = np.atleast_1d(np.asarray(points, dtype=complex))
    if p.size == 0:
        raise ParameterError("empty polyline")
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    return _polyline_distance(np.ascontiguousarray(p.real), np.ascontiguousarray(p.imag), np.ascontiguousarray(z))


@dataclass(frozen=True)
class DistortionReport:
    """Koebe-type checks on sampled conformal-map data.

    ``lower``/``upper`` are the ratios of ``|f'|`` to the two derivative
    bounds (``lower >= 1`` and ``upper <= 1`` when compliant); ``ball`` is
    the ratio of each neighbour displacement to its growth bound.
    """

    n: int
    slack: float
    lower: np.ndarray
    upper: np.ndarray
    ball: np.ndarray
    violations: int

    def to_dict(self) -> dict:
        return {"n": self.n, "slack": self.slack, "violations": self.violations,
                "min_lower_ratio": float(self.lower.min()) if self.n else None,
                "max_upper_ratio": float(self.upper.max()) if self.n else None,
                "max_ball_ratio": float(self.ball.max()) if self.ball.size else None}


def check_distortion(z, fz, dist_z, dist_fz, fprime, h, neighbours=None, f_neighbours=None,
                     slack: float = 1.05) -> DistortionReport:
    """Check ``d~/(4d) <= |f'| <= 4 d~/d`` and the growth bound on neighbours.

    ``neighbours[m]`` are points ``w`` with ``|w - z_m| = r d_m`` and
    ``f_neighbours`` their images; each must satisfy
    ``|f(w) - f(z)| <= 4|w-z|/(1-r^2) * d~/d``.  All bounds get a
    multiplicative ``slack``.  ``h`` is the finite-difference step and must
    be at most a tenth of ``dist_z``.
    """
    dist_z = np.asarray(dist_z, dtype=float)
    dist_fz = np.asarray(dist_fz, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), dist_z.shape)
    if np.any(h > 0.1 * dist_z):
        raise Refusal("finite-difference step too large relative to the boundary distance")
    a = np.abs(np.asarray(fprime, dtype=complex))
    lower = a / (dist_fz / (4 * dist_z)) * slack
    upper = a / (4 * dist_fz / dist_z) / slack
    bad = int(np.sum(lower < 1) + np.sum(upper > 1))
    ball = np.zeros(0)
    if neighbours is not None:
        w = np.asarray(neighbours, dtype=complex)
        fw = np.asarray(f_neighbours, dtype=complex)
        zz = np.asarray(z, dtype=complex)[:, None]
        fzz = np.asarray(fz, dtype=complex)[:, None]
        r = np.abs(w - zz) / dist_z[:, None]
        if np.any(r >= 1):
            raise ParameterError("neighbours must lie inside the Koebe disk")
        bound = 4 * np.abs(w - zz) / (1 - r**2) * (dist_fz / dist_z)[:, None]
        ball = (np.abs(fw - fzz) / bound / slack).ravel()
        bad += int(np.sum(ball > 1))
    return DistortionReport(int(dist_z.size), slack, lower, upper, ball, bad)
