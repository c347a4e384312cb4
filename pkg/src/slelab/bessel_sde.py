"""Brownian noise and (squared, radial) Bessel process simulation.

All randomness in the package flows from :func:`make_generator`, a Philox
(counter-based) generator keyed by ``(seed, stream)``.  Sample ``i`` of an
ensemble always uses stream ``i``, so results never depend on how the
ensemble is scheduled.

The linear Bessel process is simulated through its square
``dZ = 2 sqrt(Z) dB + d dt`` with the truncated Milstein step

    Z_{k+1} = max(0, max(0, sqrt(Z_k) + dB_k)**2 + (d - 1) dt),

which is nondecreasing both in the state and in ``d``.  Paths driven by the
same increments are therefore ordered by dimension at every grid point.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numba
import numpy as np

from .errors import ParameterError

ABSORPTION_TOL = 1e-12  # on the squared process
THETA_MIN = 1e-6  # radial cot clamp
MAX_STEPS = 10**8

BESSEL_MAGIC = b"BESL"
BINARY_VERSION = 1
_BESSEL_HEADER = struct.Struct("<4sIdddQ")


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``."""
    if seed < 0 or stream < 0:
        raise ParameterError("seed and stream must be nonnegative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def n_steps_for(T: float, dt: float) -> int:
    """``ceil(T/dt)``, forgiving of floating-point noise in the ratio."""
    if not (T > 0 and dt > 0):
        raise ParameterError(f"T and dt must be positive (got T={T}, dt={dt})")
    ratio = T / dt
    n = round(ratio)
    if abs(ratio - n) > 1e-9 * max(1.0, ratio):
        n = math.ceil(ratio)
    return max(int(n), 1)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Gaussian increments ``N(0, dt)`` on a uniform grid starting at 0."""

    seed: int
    dt: float
    increments: np.ndarray
    stream: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=np.float64)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    def __len__(self) -> int:
        return self.increments.shape[0]

    @property
    def T(self) -> float:
        return len(self) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self) + 1)

    @property
    def values(self) -> np.ndarray:
        """The Brownian path itself, ``B_0 = 0``."""
        return np.concatenate(([0.0], np.cumsum(self.increments)))

    def prefix(self, n: int) -> "BrownianPath":
        return BrownianPath(self.seed, self.dt, self.increments[:n], self.stream)

    def time_changed(self, factor: float) -> "BrownianPath":
        """The same path read on the clock ``s = factor * t``.

        ``B'(s) = sqrt(factor) B(s / factor)`` is again standard Brownian
        motion; its grid step is ``factor * dt``.
        """
        return BrownianPath(self.seed, self.dt * factor, self.increments * math.sqrt(factor), self.stream)

    def coarsened(self, m: int) -> "BrownianPath":
        """Sum consecutive blocks of ``m`` increments (drops a ragged tail)."""
        n = (len(self) // m) * m
        inc = self.increments[:n].reshape(-1, m).sum(axis=1)
        return BrownianPath(self.seed, self.dt * m, inc, self.stream)

    def negated(self) -> "BrownianPath":
        return BrownianPath(self.seed, self.dt, -self.increments, self.stream)


def sample_brownian(T: float, dt: float, seed: int, stream: int = 0) -> BrownianPath:
    """Draw ``ceil(T/dt)`` Brownian increments for ``(seed, stream)``."""
    n = n_steps_for(T, dt)
    if dt > T * (1 + 1e-12):
        raise ParameterError("dt must not exceed T")
    if n > MAX_STEPS:
        raise ParameterError(f"T/dt = {n} exceeds the {MAX_STEPS} step limit")
    inc = make_generator(seed, stream).standard_normal(n) * math.sqrt(dt)
    return BrownianPath(int(seed), float(dt), inc, int(stream))


def brownian_batch(T: float, dt: float, seed: int, n_paths: int, first_stream: int = 0) -> np.ndarray:
    """Increment matrix whose row ``i`` equals stream ``first_stream + i``."""
    n = n_steps_for(T, dt)
    out = np.empty((n_paths, n))
    sdt = math.sqrt(dt)
    for i in range(n_paths):
        out[i] = make_generator(seed, first_stream + i).standard_normal(n) * sdt
    return out


def bessel_dimension(kappa: float, rho: float) -> float:
    """``d(kappa, rho) = 1 + 2 (rho + 2) / kappa``."""
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    return 1.0 + 2.0 * (rho + 2.0) / kappa


@dataclass(frozen=True)
class BesselParams:
    dimension: float
    x0: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "radial"):
            raise ParameterError(f"unknown Bessel kind {self.kind!r}")
        if not math.isfinite(self.dimension):
            raise ParameterError("dimension must be finite")
        if self.kind == "linear":
            if self.dimension <= 0:
                raise ParameterError("linear Bessel dimension must be positive")
            if not self.x0 >= 0:
                raise ParameterError("linear Bessel start must be nonnegative")
        elif not 0 < self.x0 < 2 * math.pi:
            raise ParameterError("radial Bessel start must lie in (0, 2*pi)")


@dataclass(frozen=True, eq=False)
class BesselPath:
    """A Bessel sample path on the grid ``k * dt``.

    ``zero_hit_index`` (linear kind) is the first index at which the path
    reached the absorption tolerance; the scheme reflects instantaneously
    and keeps going.  ``clamp_index`` (radial kind) is the first index at
    which the cotangent drift was clamped or the path left
    ``(THETA_MIN, 2*pi - THETA_MIN)``.
    """

    params: BesselParams
    dt: float
    values: np.ndarray
    zero_hit_index: Optional[int] = None
    clamp_index: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    @property
    def squared(self) -> np.ndarray:
        return self.values**2

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    def to_bytes(self) -> bytes:
        head = _BESSEL_HEADER.pack(BESSEL_MAGIC, BINARY_VERSION, self.params.dimension,
                                   self.params.x0, self.dt, len(self))
        return head + self.values.astype("<f8").tobytes()

    def to_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, kind: str = "linear") -> "BesselPath":
        magic, version, d, x0, dt, n = _BESSEL_HEADER.unpack_from(data)
        if magic != BESSEL_MAGIC:
            raise ParameterError("not a Bessel dump (bad magic)")
        if version != BINARY_VERSION:
            raise ParameterError(f"unsupported Bessel dump version {version}")
        vals = np.frombuffer(data, dtype="<f8", count=n, offset=_BESSEL_HEADER.size)
        return cls(BesselParams(d, x0, kind), dt, vals.astype(np.float64))

    @classmethod
    def from_binary(cls, path, kind: str = "linear") -> "BesselPath":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), kind)


@numba.njit(cache=True)
def _squared_bessel_kernel(z0, d, inc, dt, eps):
    n = inc.shape[0]
    z = np.empty(n + 1)
    z[0] = z0
    hit = 0 if z0 <= eps else -1
    seps = math.sqrt(eps)
    drift = (d - 1.0) * dt
    for k in range(n):
        y = math.sqrt(z[k]) + inc[k]
        if y < 0.0:
            y = 0.0
        zn = y * y + drift
        if zn < 0.0:
            zn = 0.0
        z[k + 1] = zn
        if hit < 0 and (y <= seps or zn <= eps):
            hit = k + 1
    return z, hit


@numba.njit(cache=True)
def _squared_bessel_exit_kernel(z, d, inc, dt, a2, b2):
    # returns (state, steps taken, exit flag: -1 low, +1 high, 0 none)
    drift = (d - 1.0) * dt
    for k in range(inc.shape[0]):
        y = math.sqrt(z) + inc[k]
        if y < 0.0:
            y = 0.0
        z = y * y + drift
        if z < 0.0:
            z = 0.0
        if z <= a2:
            return z, k + 1, -1
        if z >= b2:
            return z, k + 1, 1
    return z, inc.shape[0], 0


@numba.njit(cache=True)
def _radial_bessel_kernel(x0, delta, inc, dt, theta_min):
    n = inc.shape[0]
    x = np.empty(n + 1)
    x[0] = x0
    c = (delta - 1.0) / 4.0
    cot_cap = 1.0 / math.tan(theta_min / 2.0)
    lo = theta_min
    hi = 2.0 * math.pi - theta_min
    clamp = -1
    for k in range(n):
        cot = 1.0 / math.tan(x[k] / 2.0)
        if cot > cot_cap:
            cot = cot_cap
            if clamp < 0:
                clamp = k
        elif cot < -cot_cap:
            cot = -cot_cap
            if clamp < 0:
                clamp = k
        xn = x[k] + c * cot * dt + inc[k]
        if xn <= lo or xn >= hi:
            xn = min(max(xn, lo), hi)
            if clamp < 0:
                clamp = k + 1
        x[k + 1] = xn
    return x, clamp


def _steps_for_horizon(noise: BrownianPath, T: Optional[float]) -> int:
    if T is None:
        return len(noise)
    if T < 0:
        raise ParameterError("horizon must be nonnegative")
    n = 0 if T == 0 else n_steps_for(T, noise.dt)
    if n > len(noise):
        raise ParameterError(f"noise covers {len(noise)} steps but the horizon needs {n}")
    return n


def simulate_bessel(params: BesselParams, noise: BrownianPath, T: Optional[float] = None) -> BesselPath:
    """Linear Bessel path as the square root of the truncated squared scheme."""
    if params.kind != "linear":
        raise ParameterError("simulate_bessel expects kind='linear'")
    n = _steps_for_horizon(noise, T)
    z, hit = _squared_bessel_kernel(float(params.x0) ** 2, float(params.dimension),
                                    np.ascontiguousarray(noise.increments[:n]), noise.dt, ABSORPTION_TOL)
    return BesselPath(params, noise.dt, np.sqrt(z), None if hit < 0 else int(hit), seed=noise.seed)


def simulate_radial_bessel(params: BesselParams, noise: BrownianPath, T: Optional[float] = None,
                           theta_min: float = THETA_MIN) -> BesselPath:
    """Euler path of ``dX = (delta-1)/4 cot(X/2) dt + dB`` on ``(0, 2*pi)``."""
    if params.kind != "radial":
        raise ParameterError("simulate_radial_bessel expects kind='radial'")
    n = _steps_for_horizon(noise, T)
    x, clamp = _radial_bessel_kernel(float(params.x0), float(params.dimension),
                                     np.ascontiguousarray(noise.increments[:n]), noise.dt, theta_min)
    return BesselPath(params, noise.dt, x, clamp_index=None if clamp < 0 else int(clamp), seed=noise.seed)


@dataclass(frozen=True)
class PairComparison:
    """Coupled comparison of dimensions ``d_low <= d_high``.

    ``integral_bound`` is ``(d_high - d_low)/2 * int_0^T ds / Z_min`` over the
    minimal-dimension path (left Riemann sum, infinite if it touches 0).
    ``gronwall_bound`` is ``exp(T |1 - d_high| / (2 u^2)) (d_high - d_low)/2 * T/u``
    with ``u`` the pathwise minimum of the minimal-dimension path (``None``
    when ``u == 0``).
    """

    d_low: float
    d_high: float
    max_violation: float
    sup_difference: float
    integral_bound: float
    gronwall_bound: Optional[float]


@dataclass(frozen=True)
class CouplingReport:
    dims: Tuple[float, ...]
    T: float
    dt: float
    min_value: float
    pairs: Tuple[PairComparison, ...] = field(default_factory=tuple)

    @property
    def total_violation(self) -> float:
        return max((p.max_violation for p in self.pairs), default=0.0)


def couple_bessel(dims: Sequence[float], x0: float, noise: BrownianPath,
                  T: Optional[float] = None) -> Tuple[List[BesselPath], CouplingReport]:
    """Simulate Bessel processes of several dimensions on one noise path."""
    if len(dims) == 0:
        raise ParameterError("dims must be nonempty")
    paths = [simulate_bessel(BesselParams(float(d), x0), noise, T) for d in dims]
    order = np.argsort(np.asarray(dims, dtype=float), kind="stable")
    base = paths[order[0]].values
    horizon = (len(base) - 1) * noise.dt
    u = float(base.min())
    with np.errstate(divide="ignore"):
        integral = float(np.sum(noise.dt / base[:-1])) if len(base) > 1 else 0.0
    pairs = []
    for a in range(len(order)):
        for b in range(a + 1, len(order)):
            lo, hi = paths[order[a]], paths[order[b]]
            dlo, dhi = lo.params.dimension, hi.params.dimension
            diff = hi.values - lo.values
            viol = float(max(0.0, -diff.min()))
            gap = dhi - dlo
            gron = None
            if u > 0:
                expo = horizon * abs(1.0 - dhi) / (2 * u * u)
                gron = 0.0 if gap == 0 else (math.exp(expo) * gap / 2 * horizon / u if expo < 700 else math.inf)
            ib = gap / 2 * integral if gap > 0 else 0.0
            pairs.append(PairComparison(dlo, dhi, viol, float(np.abs(diff).max()), ib, gron))
    report = CouplingReport(tuple(float(d) for d in dims), horizon, noise.dt, u, tuple(pairs))
    return paths, report


def bessel_hitting_probability(d: float, x0: float, a: float, b: float) -> float:
    """Probability that a ``d``-dimensional Bessel process from ``x0`` hits ``a`` before ``b``."""
    if not (0 < a < b and a <= x0 <= b):
        raise ParameterError("need 0 < a <= x0 <= b with a < b")
    if d == 2:
        return (math.log(b) - math.log(x0)) / (math.log(b) - math.log(a))
    p = 2.0 - d
    return (b**p - x0**p) / (b**p - a**p)


def bessel_exit_low(d: float, x0: float, a: float, b: float, dt: float, seed: int, stream: int,
                    max_T: float = 100.0, chunk: int = 1024) -> Optional[bool]:
    """Run one squared-Bessel path until it leaves ``(a, b)``.

    Noise is drawn from stream ``(seed, stream)`` chunk by chunk, so the
    increments coincide with ``sample_brownian(max_T, dt, seed, stream)``.
    Returns True when ``a`` is reached first, False for ``b``, None if the
    horizon ``max_T`` runs out.
    """
    rng = make_generator(seed, stream)
    z = x0 * x0
    sdt = math.sqrt(dt)
    left = n_steps_for(max_T, dt)
    while left > 0:
        m = min(chunk, left)
        z, _, flag = _squared_bessel_exit_kernel(z, d, rng.standard_normal(m) * sdt, dt, a * a, b * b)
        if flag:
            return flag < 0
        left -= m
    return None
