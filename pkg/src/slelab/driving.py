"""Loewner driving functions: SLE_kappa, SLE_kappa(rho) and radial SLE_kappa(rho).

Chordal force points are real.  A force point sitting at ``0+`` or ``0-`` is
expressed by putting position ``0.0`` in the ``right`` or ``left`` list of a
:class:`ForcePointConfig`; the side tag, never the sign bit of ``0.0``, says
which side of the driving point it is on.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numba
import numpy as np

from .bessel_sde import (THETA_MIN, BesselParams, BrownianPath, bessel_dimension,
                         simulate_bessel, simulate_radial_bessel)
from .errors import ParameterError, Refusal

TOUCH_FACTOR = 10.0  # touching when |W - V| < TOUCH_FACTOR * sqrt(kappa dt)


@dataclass(frozen=True)
class ForcePointConfig:
    """Boundary force points as ``(position, weight)`` pairs.

    ``left`` positions are <= 0 and strictly decreasing (innermost first);
    ``right`` positions are >= 0 and strictly increasing.
    """

    left: Tuple[Tuple[float, float], ...] = ()
    right: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        left = tuple((float(x), float(r)) for x, r in self.left)
        right = tuple((float(x), float(r)) for x, r in self.right)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        for x, r in left + right:
            if not (math.isfinite(x) and math.isfinite(r)):
                raise ParameterError("force point positions and weights must be finite")
        if any(x > 0 for x, _ in left) or any(x < 0 for x, _ in right):
            raise ParameterError("left force points must be <= 0 and right ones >= 0")
        lx = [x for x, _ in left]
        rx = [x for x, _ in right]
        if any(b >= a for a, b in zip(lx, lx[1:])):
            raise ParameterError("left positions must be strictly decreasing")
        if any(b <= a for a, b in zip(rx, rx[1:])):
            raise ParameterError("right positions must be strictly increasing")

    @classmethod
    def single(cls, rho: float, x: float = 0.0, side: str = "right") -> "ForcePointConfig":
        if side == "right":
            return cls(right=((abs(x), rho),))
        if side == "left":
            return cls(left=((-abs(x), rho),))
        raise ParameterError(f"side must be 'left' or 'right', not {side!r}")

    def __len__(self) -> int:
        return len(self.left) + len(self.right)

    @property
    def positions(self) -> np.ndarray:
        return np.array([x for x, _ in self.left] + [x for x, _ in self.right], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r for _, r in self.left] + [r for _, r in self.right], dtype=float)

    @property
    def sides(self) -> np.ndarray:
        """-1 for left points, +1 for right points, in ``positions`` order."""
        return np.array([-1] * len(self.left) + [1] * len(self.right), dtype=np.int64)

    def min_gap(self) -> Optional[float]:
        """Smallest nonzero gap among 0 and the force points on each side."""
        gaps = []
        for pts in ([0.0] + [x for x, _ in self.left], [0.0] + [x for x, _ in self.right]):
            gaps += [abs(b - a) for a, b in zip(pts, pts[1:]) if b != a]
        return min(gaps) if gaps else None


@dataclass(frozen=True, eq=False)
class DrivingFunction:
    """A driving function sampled on the capacity grid ``t_k = k dt``.

    Chordal: ``W`` real, ``V`` has one row per force point (order of
    ``force_points.positions``), ``touching`` records which force points were
    touching ``W`` at each grid index.  Radial: ``W = exp(i alpha)`` on the
    unit circle, ``theta = alpha - beta`` with ``beta = arg O``.
    """

    kappa: float
    dt: float
    W: np.ndarray
    V: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    force_points: ForcePointConfig = field(default_factory=ForcePointConfig)
    threshold_index: Optional[int] = None
    geometry: str = "chordal"
    touching: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    rho: Optional[float] = None
    seed: Optional[int] = None
    clamp_index: Optional[int] = None

    def __post_init__(self):
        for name in ("W", "V", "touching", "theta", "alpha", "beta"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.W.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    @property
    def T(self) -> float:
        return (len(self) - 1) * self.dt

    def metadata(self) -> dict:
        fp = self.force_points
        return {
            "kappa": self.kappa,
            "geometry": self.geometry,
            "weights": fp.weights.tolist() if self.rho is None else [self.rho],
            "positions": fp.positions.tolist(),
            "sides": ["left" if s < 0 else "right" for s in fp.sides.tolist()],
            "dt": self.dt,
            "seed": self.seed,
            "threshold_time": None if self.threshold_index is None else self.threshold_index * self.dt,
        }

    def to_csv(self, path) -> None:
        """CSV with a one-line ``# {json}`` metadata header."""
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(self.metadata(), sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            t = self.times
            if self.geometry == "radial":
                w.writerow(["t", "W_re", "W_im", "theta", "alpha"])
                for k in range(len(self)):
                    w.writerow([repr(float(t[k])), repr(float(self.W[k].real)), repr(float(self.W[k].imag)),
                                repr(float(self.theta[k])), repr(float(self.alpha[k]))])
            else:
                w.writerow(["t", "W"] + [f"V_{j + 1}" for j in range(self.V.shape[0])])
                for k in range(len(self)):
                    w.writerow([repr(float(t[k])), repr(float(self.W[k]))]
                               + [repr(float(v)) for v in self.V[:, k]])


def chordal_sle_driving(kappa: float, noise: BrownianPath) -> DrivingFunction:
    """``W = sqrt(kappa) B``."""
    if not kappa >= 0:
        raise ParameterError("kappa must be nonnegative")
    W = math.sqrt(kappa) * noise.values
    return DrivingFunction(float(kappa), noise.dt, W, np.zeros((0, len(W))), seed=noise.seed)


@numba.njit(cache=True)
def _bessel_gap_step(G, e_over, rho, kappa, dt, drift_dt):
    """Advance a touching gap by the squared-Bessel Milstein step.

    Returns the new gap and the step integral of ``1/gap``.
    """
    sk = math.sqrt(kappa)
    d = 1.0 + 2.0 * (rho + 2.0) / kappa
    y = G / sk + e_over
    if y < 0.0:
        y = 0.0
    z = y * y + (d - 1.0) * dt
    if z < 0.0:
        z = 0.0
    Gn = sk * math.sqrt(z)
    if rho + 2.0 > 1e-12:
        I = (Gn - G + drift_dt) / (rho + 2.0)
    else:
        I = dt / max(0.5 * (G + Gn), math.sqrt(kappa * dt))
    if I < 0.0:
        I = 0.0
    return Gn, I


@numba.njit(cache=True)
def _euler_force_kernel(kappa, dt, inc, pos, rho, side, eps_touch):
    n = inc.shape[0]
    m = pos.shape[0]
    sk = math.sqrt(kappa)
    W = np.zeros(n + 1)
    V = np.empty((m, n + 1))
    touch = np.zeros((m, n + 1), dtype=np.bool_)
    for j in range(m):
        V[j, 0] = pos[j]
    threshold = -1
    tmask = np.zeros(m, dtype=np.bool_)
    Vn = np.empty(m)
    last = n
    for k in range(n + 1):
        w = W[k]
        total = 0.0
        for j in range(m):
            t = abs(V[j, k] - w) < eps_touch
            touch[j, k] = t
            tmask[j] = t
            if t:
                total += rho[j]
        if total <= -2.0:
            threshold = k
            last = k
            break
        if k == n:
            break
        dB = inc[k]
        for _attempt in range(m + 1):
            D = 0.0
            rhoR = 0.0
            rhoL = 0.0
            iR = -1
            iL = -1
            for j in range(m):
                if tmask[j]:
                    if side[j] > 0:
                        rhoR += rho[j]
                        if iR < 0 or V[j, k] < V[iR, k]:
                            iR = j
                    else:
                        rhoL += rho[j]
                        if iL < 0 or V[j, k] > V[iL, k]:
                            iL = j
                else:
                    D += rho[j] / (w - V[j, k])
            wn = w + sk * dB + D * dt
            GR = 0.0
            GL = 0.0
            IR = 0.0
            IL = 0.0
            if iR >= 0:
                GR, IR = _bessel_gap_step(V[iR, k] - w, (-dB - D * dt / sk), rhoR, kappa, dt,
                                          sk * dB + D * dt)
                wn -= rhoR * IR
            if iL >= 0:
                GL, IL = _bessel_gap_step(w - V[iL, k], (dB + D * dt / sk), rhoL, kappa, dt,
                                          -sk * dB - D * dt)
                wn += rhoL * IL
            for j in range(m):
                v = V[j, k]
                if tmask[j]:
                    if side[j] > 0:
                        Vn[j] = max(v + 2.0 * IR, wn + GR) if j == iR else v + 2.0 * IR
                    else:
                        Vn[j] = min(v - 2.0 * IL, wn - GL) if j == iL else v - 2.0 * IL
                else:
                    Vn[j] = v + 2.0 * dt / (v - w)
            crossed = False
            for j in range(m):
                if not tmask[j] and ((side[j] > 0 and Vn[j] < wn) or (side[j] < 0 and Vn[j] > wn)):
                    tmask[j] = True
                    crossed = True
            if not crossed:
                break
        # keep same-side order and the sign of V - W
        prevR = -1
        prevL = -1
        for j in range(m):
            if side[j] > 0:
                if Vn[j] < wn:
                    Vn[j] = wn
                if prevR >= 0 and Vn[j] < Vn[prevR]:
                    Vn[j] = Vn[prevR]
                if Vn[j] < V[j, k]:
                    Vn[j] = V[j, k]
                prevR = j
            else:
                if Vn[j] > wn:
                    Vn[j] = wn
                if prevL >= 0 and Vn[j] > Vn[prevL]:
                    Vn[j] = Vn[prevL]
                if Vn[j] > V[j, k]:
                    Vn[j] = V[j, k]
                prevL = j
        W[k + 1] = wn
        for j in range(m):
            V[j, k + 1] = Vn[j]
    return W[:last + 1], V[:, :last + 1], touch[:, :last + 1], threshold


def sle_kappa_rho_driving_euler(kappa: float, fps: ForcePointConfig, noise: BrownianPath,
                                T: Optional[float] = None,
                                touch_factor: float = TOUCH_FACTOR) -> DrivingFunction:
    """Euler integration of the SLE_kappa(rho) driving SDE with boundary force points.

    A force point counts as touching when ``|W - V| < touch_factor * sqrt(kappa dt)``.
    While touching, the gap is advanced as ``sqrt(kappa)`` times a Bessel
    process of dimension ``d(kappa, sum of touching weights on that side)``
    and the singular drift is replaced by its exact step integral, so no force
    point ever crosses ``W``.  The run stops at the first grid index where the
    touching weights sum to ``<= -2``.
    """
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    n = len(noise) if T is None else min(len(noise), int(round(T / noise.dt)))
    gap = fps.min_gap()
    if gap is not None and noise.dt > gap * gap / 100:
        raise Refusal(f"dt={noise.dt:g} is too coarse for the smallest force-point gap {gap:g}; "
                      f"use dt <= {gap * gap / 100:g}")
    eps = touch_factor * math.sqrt(kappa * noise.dt)
    W, V, touch, thr = _euler_force_kernel(float(kappa), noise.dt,
                                           np.ascontiguousarray(noise.increments[:n]),
                                           fps.positions, fps.weights, fps.sides, eps)
    return DrivingFunction(float(kappa), noise.dt, W, V, fps, None if thr < 0 else int(thr),
                           touching=touch, seed=noise.seed)


def sle_kappa_rho_driving_bessel(kappa: float, rho: float, x0: float, side: str,
                                 noise: BrownianPath, T: Optional[float] = None) -> DrivingFunction:
    """Single force point SLE_kappa(rho) built from a Bessel process.

    ``x0 >= 0`` is the distance from the driving point to the force point.
    The gap ``|V - W|`` equals ``sqrt(kappa) X`` for a Bessel process ``X`` of
    dimension ``d(kappa, rho)`` started at ``x0/sqrt(kappa)``, and ``V`` moves by
    ``(2/sqrt(kappa)) int ds/X`` where the step integral is read off the
    semimartingale decomposition ``dX = (d-1)/(2X) dt + dB``.
    """
    if side not in ("left", "right"):
        raise ParameterError(f"side must be 'left' or 'right', not {side!r}")
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    if rho <= -2:
        raise Refusal("the Bessel construction needs rho > -2")
    if not x0 >= 0:
        raise ParameterError("x0 must be nonnegative")
    sk = math.sqrt(kappa)
    d = bessel_dimension(kappa, rho)
    # right: X is driven by -B so that W ~ +sqrt(kappa) B
    drive = noise.negated() if side == "right" else noise
    X = simulate_bessel(BesselParams(d, x0 / sk), drive, T)
    n = len(X) - 1
    steps = np.diff(X.values) - drive.increments[:n]
    integral = np.maximum(0.0, 2.0 * steps / (d - 1.0))
    cum = np.concatenate(([0.0], np.cumsum(integral)))
    if side == "right":
        V = x0 + (2.0 / sk) * cum
        W = V - sk * X.values
    else:
        V = -x0 - (2.0 / sk) * cum
        W = V + sk * X.values
    fps = ForcePointConfig.single(rho, x0, side)
    return DrivingFunction(float(kappa), noise.dt, W, V[None, :], fps, None, seed=noise.seed)


def psi(z, w):
    """``Psi(z, w) = -z (z + w) / (z - w)``."""
    return -z * (z + w) / (z - w)


def psi_tilde(z, w):
    """``(Psi(z, w) + Psi(1/conj(z), w)) / 2``."""
    return 0.5 * (psi(z, w) + psi(1.0 / np.conj(z), w))


def radial_sle_driving(kappa: float, rho: float, theta0: float, noise: BrownianPath,
                       T: Optional[float] = None, theta_min: float = THETA_MIN) -> DrivingFunction:
    """Radial SLE_kappa(rho) driving pair through the angle ``theta = arg W - arg O``.

    ``theta`` solves ``d theta = (rho+2)/2 cot(theta/2) dt + sqrt(kappa) dB``,
    i.e. ``theta_t = X_{kappa t}`` for a radial Bessel process ``X`` of
    dimension ``d(kappa, rho)``.  The force point moves by
    ``d arg O = -cot(theta/2) dt`` (left-point rule, same cot clamp), and
    ``arg O_0 = 0``.
    """
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    if not 0 < theta0 < 2 * math.pi:
        raise ParameterError("theta0 must lie strictly inside (0, 2*pi)")
    delta = bessel_dimension(kappa, rho)
    X = simulate_radial_bessel(BesselParams(delta, theta0, "radial"), noise.time_changed(kappa),
                               None if T is None else kappa * T, theta_min)
    theta = X.values
    cap = 1.0 / math.tan(theta_min / 2)
    cot = np.clip(1.0 / np.tan(theta[:-1] / 2), -cap, cap)
    beta = np.concatenate(([0.0], -np.cumsum(cot) * noise.dt))
    alpha = theta + beta
    return DrivingFunction(float(kappa), noise.dt, np.exp(1j * alpha), geometry="radial",
                           theta=theta, alpha=alpha, beta=beta, rho=float(rho), seed=noise.seed,
                           clamp_index=X.clamp_index)


def radial_complex_euler(kappa: float, rho: float, theta0: float, noise: BrownianPath,
                         T: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Plain Euler scheme for the complex radial SLE_kappa(rho) system.

    ``dW = (rho/2 Psi~(W, O) - kappa/2 W) dt + i sqrt(kappa) W dB`` and
    ``dO = Psi(O, W) dt`` with ``W_0 = exp(i theta0)``, ``O_0 = 1``.  Used as an
    independent check of :func:`radial_sle_driving`.
    """
    n = len(noise) if T is None else int(round(T / noise.dt))
    inc = np.ascontiguousarray(noise.increments[:n], dtype=float)
    return _radial_euler_kernel(float(kappa), float(rho), complex(np.exp(1j * theta0)), inc, noise.dt)


@numba.njit(cache=True)
def _psi(z, w):
    return -z * (z + w) / (z - w)


@numba.njit(cache=True)
def _radial_euler_kernel(kappa, rho, w0, inc, dt):
    n = inc.shape[0]
    sk = math.sqrt(kappa)
    W = np.empty(n + 1, dtype=np.complex128)
    O = np.empty(n + 1, dtype=np.complex128)
    W[0] = w0
    O[0] = 1.0
    for k in range(n):
        w, o = W[k], O[k]
        pt = 0.5 * (_psi(w, o) + _psi(1.0 / np.conj(w), o))
        W[k + 1] = w + (0.5 * rho * pt - 0.5 * kappa * w) * dt + 1j * sk * w * inc[k]
        O[k + 1] = o + _psi(o, w) * dt
    return W, O


def continuation_threshold_time(drive: DrivingFunction) -> Optional[float]:
    """Capacity time at which the continuation threshold was hit, if ever."""
    if drive.geometry != "chordal":
        raise ParameterError("continuation threshold is defined for chordal drives")
    if drive.threshold_index is None:
        return None
    return float(drive.times[drive.threshold_index])


def first_threshold_index(touching: np.ndarray, weights: Sequence[float]) -> Optional[int]:
    """Brute-force scan of recorded touch flags for the threshold index."""
    w = np.asarray(weights, dtype=float)
    if touching is None or touching.shape[0] == 0:
        return None
    sums = (touching * w[:, None]).sum(axis=0)
    hit = np.nonzero(sums <= -2.0)[0]
    return int(hit[0]) if hit.size else None
