"""Chordal and radial Loewner chains for sampled driving functions.

Over each grid step ``[t_{j-1}, t_j]`` the driving function is held at
``W_j`` and the chordal equation is solved exactly by the slit map

    phi_j(u) = W_j + sqrt((u - W_j)**2 + 4 dt),

so every step adds exactly ``2 dt`` of half-plane capacity.  ``g_{t_k}`` is
``phi_k o ... o phi_1`` and the trace point is
``gamma_k = phi_1^{-1} o ... o phi_k^{-1}(W_k)``.  Square roots always take
the branch with nonnegative imaginary part.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .driving import DrivingFunction
from .errors import ParameterError, Refusal

SWALLOW_TOL = 1e-9
LIFT_FACTOR = 1e-6  # inverse maps evaluated at W + i * LIFT_FACTOR * sqrt(dt)
MAX_TRACE_STEPS = 10**5

TRACE_MAGIC = b"TRCE"
TRACE_VERSION = 1
_TRACE_HEADER = struct.Struct("<4sIddIQ")
_PARAM_CODES = {"capacity": 0, "area": 1}


# -- one-step maps ---------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _stable_sqrt(a, b):
    # |Re|, |Im| of sqrt(a + ib); the smaller part comes from b/(2 * larger) to avoid cancellation
    r = math.hypot(a, b)
    if r == 0.0:
        return 0.0, 0.0
    if a >= 0.0:
        sx = math.sqrt(0.5 * (r + a))
        return sx, abs(b) / (2.0 * sx)
    sy = math.sqrt(0.5 * (r - a))
    return abs(b) / (2.0 * sy), sy


@numba.njit(cache=True, inline="always")
def _forward_step(zx, zy, w, c):
    # W + sqrt((z - W)^2 + c), Im >= 0 branch
    ux = zx - w
    a = ux * ux - zy * zy + c
    b = 2.0 * ux * zy
    sx, sy = _stable_sqrt(a, b)
    if b < 0.0 or (b == 0.0 and ux < 0.0):
        sx = -sx
    return w + sx, sy


@numba.njit(cache=True, inline="always")
def _inverse_step(zx, zy, w, c):
    # W + sqrt((z - W)^2 - c), Im >= 0 branch
    ux = zx - w
    a = ux * ux - zy * zy - c
    b = 2.0 * ux * zy
    sx, sy = _stable_sqrt(a, b)
    if b < 0.0 or (b == 0.0 and ux < 0.0):
        sx = -sx
    return w + sx, sy


def advance_map_step(u, W: float, dt: float):
    """One exact chordal step with constant driving ``W``: ``W + sqrt((u-W)^2 + 4 dt)``.

    Works elementwise on arrays.  Real points outside the slit keep the side
    of ``W`` they started on; ``u = W`` itself goes to ``W + 2 sqrt(dt)``.
    """
    u = np.asarray(u, dtype=complex)
    if np.any(u.imag < 0):
        raise ParameterError("points must lie in the closed upper half-plane")
    out = _forward_vec(np.ascontiguousarray(u.ravel()), float(W), 4.0 * dt)
    return out.reshape(u.shape)[()] if u.ndim else complex(out[0])


def inverse_map_step(z, W: float, dt: float):
    """Inverse of :func:`advance_map_step`; ``z = W`` maps to the slit tip ``W + 2i sqrt(dt)``."""
    z = np.asarray(z, dtype=complex)
    out = _inverse_vec(np.ascontiguousarray(z.ravel()), float(W), 4.0 * dt)
    return out.reshape(z.shape)[()] if z.ndim else complex(out[0])


@numba.njit(cache=True)
def _forward_vec(z, w, c):
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        x, y = _forward_step(z[i].real, z[i].imag, w, c)
        out[i] = complex(x, y)
    return out


@numba.njit(cache=True)
def _inverse_vec(z, w, c):
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        x, y = _inverse_step(z[i].real, z[i].imag, w, c)
        out[i] = complex(x, y)
    return out


# -- chordal kernels -------------------------------------------------------

@numba.njit(cache=True)
def _trace_kernel(W, dt, k0, k1, lift):
    c = 4.0 * dt
    out = np.empty(k1 - k0, dtype=np.complex128)
    for k in range(k0, k1):
        zx = W[k]
        zy = lift
        for j in range(k, 0, -1):
            zx, zy = _inverse_step(zx, zy, W[j], c)
        out[k - k0] = complex(zx, zy)
    return out


@numba.njit(cache=True)
def _inverse_map_kernel(z, W, dt, k):
    c = 4.0 * dt
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        zx = z[i].real
        zy = z[i].imag
        for j in range(k, 0, -1):
            zx, zy = _inverse_step(zx, zy, W[j], c)
        out[i] = complex(zx, zy)
    return out


@numba.njit(cache=True)
def _forward_kernel(z, W, dt, k, tol):
    c = 4.0 * dt
    out = np.empty_like(z)
    swallowed = np.full(z.shape[0], -1, dtype=np.int64)
    for i in range(z.shape[0]):
        zx = z[i].real
        zy = z[i].imag
        for j in range(1, k + 1):
            if zy < tol:
                swallowed[i] = j - 1
                break
            zx, zy = _forward_step(zx, zy, W[j], c)
        else:
            if zy < tol:
                swallowed[i] = k
        out[i] = complex(zx, zy)
    return out, swallowed


@numba.njit(cache=True)
def _forward_history_kernel(z, W, dt, tol):
    c = 4.0 * dt
    n = W.shape[0]
    out = np.empty((z.shape[0], n), dtype=np.complex128)
    swallowed = np.full(z.shape[0], -1, dtype=np.int64)
    for i in range(z.shape[0]):
        zx = z[i].real
        zy = z[i].imag
        out[i, 0] = z[i]
        for j in range(1, n):
            if swallowed[i] < 0 and zy < tol:
                swallowed[i] = j - 1
            if swallowed[i] < 0:
                zx, zy = _forward_step(zx, zy, W[j], c)
            out[i, j] = complex(zx, zy)
        if swallowed[i] < 0 and zy < tol:
            swallowed[i] = n - 1
    return out, swallowed


# -- data types ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LoewnerTrace:
    """Trace points ``gamma_k`` with their time stamps.

    ``parameterization`` is ``"capacity"`` (times on the driving grid) or
    ``"area"`` (times are filled-hull areas).  ``notes`` carries resolution
    details for derived traces.
    """

    kappa: float
    parameterization: str
    times: np.ndarray
    points: np.ndarray
    dt: float
    seed: Optional[int] = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.parameterization not in _PARAM_CODES:
            raise ParameterError(f"unknown parameterization {self.parameterization!r}")
        t = np.array(self.times, dtype=float)
        p = np.array(self.points, dtype=complex)
        if t.shape != p.shape:
            raise ParameterError("times and points must have equal length")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]

    def prefix(self, n: int) -> "LoewnerTrace":
        return LoewnerTrace(self.kappa, self.parameterization, self.times[:n], self.points[:n],
                            self.dt, self.seed, dict(self.notes))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "re", "im"])
            for t, z in zip(self.times, self.points):
                w.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag))])

    def to_bytes(self) -> bytes:
        head = _TRACE_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, self.kappa, self.dt,
                                  _PARAM_CODES[self.parameterization], len(self))
        body = np.column_stack([self.times, self.points.real, self.points.imag]).astype("<f8")
        return head + body.tobytes()

    def to_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "LoewnerTrace":
        magic, version, kappa, dt, code, n = _TRACE_HEADER.unpack_from(data)
        if magic != TRACE_MAGIC:
            raise ParameterError("not a trace dump (bad magic)")
        if version != TRACE_VERSION:
            raise ParameterError(f"unsupported trace dump version {version}")
        body = np.frombuffer(data, dtype="<f8", count=3 * n, offset=_TRACE_HEADER.size).reshape(n, 3)
        param = {v: k for k, v in _PARAM_CODES.items()}[code]
        return cls(kappa, param, body[:, 0].copy(), body[:, 1] + 1j * body[:, 2], dt)

    def to_svg(self, path, size: int = 800) -> None:
        """Polyline rendering; the viewBox is in trace coordinates with y flipped."""
        if len(self) == 0:
            x0 = y0 = 0.0
            w = h = 1.0
        else:
            x0, x1 = float(self.points.real.min()), float(self.points.real.max())
            y1 = float(self.points.imag.max())
            y0 = 0.0
            w = max(x1 - x0, 1e-9)
            h = max(y1 - y0, 1e-9)
        pad = 0.05 * max(w, h)
        vb = (x0 - pad, -(y0 + h) - pad, w + 2 * pad, h + 2 * pad)
        pts = " ".join(f"{z.real:.9g},{-z.imag:.9g}" for z in self.points)
        stroke = 0.002 * max(w, h)
        with open(path, "w") as fh:
            fh.write('<?xml version="1.0" encoding="UTF-8"?>\n')
            fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
                     f'viewBox="{vb[0]:.9g} {vb[1]:.9g} {vb[2]:.9g} {vb[3]:.9g}" '
                     f'data-kappa="{self.kappa}" data-parameterization="{self.parameterization}">\n')
            fh.write(f'<line x1="{vb[0]:.9g}" y1="0" x2="{vb[0] + vb[2]:.9g}" y2="0" '
                     f'stroke="#888" stroke-width="{stroke:.6g}"/>\n')
            fh.write(f'<polyline fill="none" stroke="black" stroke-width="{stroke:.6g}" points="{pts}"/>\n')
            fh.write("</svg>\n")


@dataclass(frozen=True, eq=False)
class FlowState:
    """Forward images ``g_t(z_m)`` on the driving grid.

    ``images[m, k]`` is the image at ``t_k``; after a point is swallowed its
    image is frozen.  ``swallow_index[m]`` is -1 for points never swallowed.
    """

    points: np.ndarray
    images: np.ndarray
    swallow_index: np.ndarray
    dt: float

    @property
    def swallow_times(self) -> list:
        return [None if k < 0 else float(k * self.dt) for k in self.swallow_index]


# -- chordal operations ----------------------------------------------------

def _check_chordal(drive: DrivingFunction):
    if drive.geometry != "chordal":
        raise ParameterError("expected a chordal driving function")


def solve_forward(drive: DrivingFunction, points) -> FlowState:
    """Evolve points under the chordal chain, recording swallow times."""
    _check_chordal(drive)
    z = np.atleast_1d(np.asarray(points, dtype=complex))
    if np.any(z.imag < 0):
        raise ParameterError("points must lie in the closed upper half-plane")
    W = np.ascontiguousarray(drive.W, dtype=float)
    imgs, sw = _forward_kernel_history(z, W, drive.dt)
    return FlowState(z, imgs, sw, drive.dt)


def _forward_kernel_history(z, W, dt):
    return _forward_history_kernel(np.ascontiguousarray(z), W, dt, SWALLOW_TOL)


def forward_map(drive: DrivingFunction, points, k: Optional[int] = None):
    """``g_{t_k}(z)`` for many points without storing history.

    Returns ``(images, swallow_index)``.
    """
    _check_chordal(drive)
    z = np.atleast_1d(np.asarray(points, dtype=complex))
    k = len(drive) - 1 if k is None else int(k)
    return _forward_kernel(np.ascontiguousarray(z), np.ascontiguousarray(drive.W, dtype=float),
                           drive.dt, k, SWALLOW_TOL)


def inverse_map(drive: DrivingFunction, z, k: Optional[int] = None):
    """``g_{t_k}^{-1}(z)`` for points of the upper half-plane."""
    _check_chordal(drive)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    k = len(drive) - 1 if k is None else int(k)
    return _inverse_map_kernel(np.ascontiguousarray(z), np.ascontiguousarray(drive.W, dtype=float),
                               drive.dt, k)


def compute_trace(drive: DrivingFunction, max_steps: int = MAX_TRACE_STEPS,
                  stop_radius: Optional[float] = None, block: int = 256) -> LoewnerTrace:
    """Trace points by backward composition of inverse slit maps.

    Cost is ``O(N^2)`` step evaluations (about a second for ``N = 10^4``).
    With ``stop_radius`` the trace is built in blocks and cut at the first
    point with ``|gamma_k| >= stop_radius``; ``notes["exit_index"]`` records
    it (``None`` when the trace stays inside).
    """
    _check_chordal(drive)
    n = len(drive)
    if stop_radius is None and n - 1 > max_steps:
        raise Refusal(f"{n - 1} steps exceed the trace cap of {max_steps}")
    W = np.ascontiguousarray(drive.W, dtype=float)
    lift = LIFT_FACTOR * math.sqrt(drive.dt)
    notes = {"lift": lift, "steps": n - 1}
    if stop_radius is None:
        pts = _trace_kernel(W, drive.dt, 0, n, lift)
    else:
        # only the computed prefix counts against the cap
        limit = min(n, max_steps + 1)
        notes["capped"] = limit < n
        chunks = []
        exit_index = None
        for k0 in range(0, limit, block):
            part = _trace_kernel(W, drive.dt, k0, min(limit, k0 + block), lift)
            out = np.nonzero(np.abs(part) >= stop_radius)[0]
            if out.size:
                chunks.append(part[:out[0] + 1])
                exit_index = k0 + int(out[0])
                break
            chunks.append(part)
        pts = np.concatenate(chunks)
        notes["exit_index"] = exit_index
        notes["stop_radius"] = stop_radius
    return LoewnerTrace(drive.kappa, "capacity", drive.times[:len(pts)], pts, drive.dt, drive.seed, notes)


# -- radial ----------------------------------------------------------------

@numba.njit(cache=True)
def _radial_step(z, w, edt, dt):
    # exact flow of dg/dt = g (w + g)/(w - g) over dt with w fixed
    u = z / w
    if u == 0:
        return 0j
    q = (1.0 + u) ** 2 / (u * edt)
    s = q - 2.0
    disc = np.sqrt(q * q - 4.0 * q + 0j)
    # roots of g^2 - s g + 1 = 0 have product 1: take the large one without cancellation
    big = 0.5 * (s + disc) if (s.real * disc.real + s.imag * disc.imag) >= 0.0 else 0.5 * (s - disc)
    small = 1.0 / big
    if abs(abs(big) - abs(small)) > 1e-12:
        g = small
    else:
        r1, r2 = big, small
        guess = u + dt * u * (1.0 + u) / (1.0 - u) if u != 1.0 else u
        g = r1 if abs(r1 - guess) <= abs(r2 - guess) else r2
    return g * w


@numba.njit(cache=True)
def _radial_history_kernel(z, W, dt, tol):
    n = W.shape[0]
    edt = math.exp(dt)
    out = np.empty((z.shape[0], n), dtype=np.complex128)
    swallowed = np.full(z.shape[0], -1, dtype=np.int64)
    for i in range(z.shape[0]):
        g = z[i]
        out[i, 0] = g
        boundary = abs(g) >= 1.0 - tol
        for j in range(1, n):
            if swallowed[i] < 0:
                if boundary:
                    if abs(g - W[j]) < tol:
                        swallowed[i] = j - 1
                elif 1.0 - abs(g) < tol:
                    swallowed[i] = j - 1
            if swallowed[i] < 0:
                g = _radial_step(g, W[j], edt, dt)
            out[i, j] = g
    return out, swallowed


def solve_radial_forward(drive: DrivingFunction, points) -> FlowState:
    """Evolve points of the closed unit disk under the radial chain.

    Each step solves the radial equation exactly for constant driving via
    ``h(g_t) = e^t h(z)`` with ``h(u) = u/(1+u)^2`` in the frame ``u = z/W``.
    Interior points are swallowed when they come within the swallow
    tolerance of the circle; circle points when they meet ``W``.
    """
    if drive.geometry != "radial":
        raise ParameterError("expected a radial driving function")
    z = np.atleast_1d(np.asarray(points, dtype=complex))
    if np.any(np.abs(z) > 1 + 1e-12):
        raise ParameterError("points must lie in the closed unit disk")
    W = np.ascontiguousarray(drive.W, dtype=complex)
    imgs, sw = _radial_history_kernel(np.ascontiguousarray(z), W, drive.dt, SWALLOW_TOL)
    return FlowState(z, imgs, sw, drive.dt)


# -- area parameterization and capacity functions --------------------------

def reparameterize_by_area(trace: LoewnerTrace, raster_resolution: float,
                           checkpoints: int = 256) -> LoewnerTrace:
    """Time-change a space-filling trace so that time is filled-hull area.

    The hull of ``gamma[0..k]`` is rasterized at pixel size
    ``raster_resolution`` and filled at ``checkpoints`` evenly spaced
    indices; areas in between are interpolated linearly.
    """
    from .geometry import fill_hull, label_polyline_raster

    if trace.parameterization != "capacity":
        raise ParameterError("expected a capacity-parameterized trace")
    if len(trace) == 0:
        return LoewnerTrace(trace.kappa, "area", [], [], trace.dt, trace.seed,
                            {"resolution": raster_resolution})
    if trace.kappa < 8:
        raise Refusal("area parameterization needs a space-filling trace (kappa >= 8)")
    if not raster_resolution > 0:
        raise ParameterError("raster_resolution must be positive")
    labels, raster = label_polyline_raster(trace.points, raster_resolution)
    n = len(trace)
    ks = np.unique(np.linspace(0, n - 1, min(checkpoints, n)).round().astype(int))
    areas = np.empty(ks.size)
    px = raster_resolution**2
    for i, k in enumerate(ks):
        filled = fill_hull(raster.with_bitmap(labels <= k))
        areas[i] = filled.bitmap.sum() * px
    areas = np.maximum.accumulate(areas)
    # filling adds nothing beyond the curve's own pixels: a slit, which has measure zero
    if areas[-1] <= raster.bitmap.sum() * px:
        raise Refusal("trace encloses no area; a slit has Lebesgue measure zero")
    times = np.interp(np.arange(n), ks, areas)
    notes = {"resolution": raster_resolution, "checkpoints": int(ks.size),
             "total_area": float(areas[-1]), "source": "capacity"}
    return LoewnerTrace(trace.kappa, "area", times, trace.points, trace.dt, trace.seed, notes)


@dataclass(frozen=True, eq=False)
class CapacityFunctions:
    """Sampled ``H(r) = hcap(hull(gamma[0, r]))`` and its right inverse ``S``.

    ``H_monotone`` is the running maximum of the estimates; ``consistent`` is
    False when some estimate drops below an earlier one by more than three
    combined standard errors.
    """

    r: np.ndarray
    H: np.ndarray
    H_stderr: np.ndarray
    consistent: bool = True

    @property
    def H_monotone(self) -> np.ndarray:
        return np.maximum.accumulate(self.H)

    def S(self, t):
        """``inf{r : H(r) >= t}`` with linear interpolation between samples."""
        t = np.asarray(t, dtype=float)
        Hm = self.H_monotone
        out = np.full(t.shape, np.nan)
        flat_t = np.atleast_1d(t)
        res = np.atleast_1d(out)
        for idx, level in enumerate(flat_t):
            i = int(np.searchsorted(Hm, level, side="left"))
            if i >= Hm.size:
                continue
            if i == 0 or Hm[i] == level:
                res[idx] = self.r[i]
            else:
                h0, h1 = Hm[i - 1], Hm[i]
                res[idx] = self.r[i - 1] + (level - h0) / (h1 - h0) * (self.r[i] - self.r[i - 1])
        return res.reshape(t.shape)[()] if t.ndim else float(res[0])

    @classmethod
    def from_samples(cls, r, H, H_stderr=None) -> "CapacityFunctions":
        r = np.asarray(r, dtype=float)
        H = np.asarray(H, dtype=float)
        se = np.zeros_like(H) if H_stderr is None else np.asarray(H_stderr, dtype=float)
        ok = True
        best = 0
        for i in range(1, H.size):
            if H[i] < H[best] - 3 * math.hypot(se[i], se[best]):
                ok = False
            if H[i] > H[best]:
                best = i
        return cls(r, H, se, ok)


def capacity_functions(trace: LoewnerTrace, n_times: int = 8, walkers: int = 4000, seed: int = 0,
                       resolution: Optional[float] = None) -> CapacityFunctions:
    """Estimate ``H`` on ``n_times`` prefixes of the trace by Monte-Carlo hcap."""
    from .geometry import estimate_hcap, fill_hull, rasterize_polyline

    if len(trace) < 2:
        raise ParameterError("trace too short")
    ks = np.unique(np.linspace(0, len(trace) - 1, n_times + 1).round().astype(int))[1:]
    H, se = [], []
    for i, k in enumerate(ks):
        pts = trace.points[:k + 1]
        hull = fill_hull(rasterize_polyline(pts, resolution))
        est = estimate_hcap(hull, n=walkers, seed=seed, stream_offset=i * walkers)
        H.append(est.value)
        se.append(est.stderr)
    return CapacityFunctions.from_samples(trace.times[ks], H, se)
