"""Small Monte-Carlo bookkeeping helpers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class McEstimate:
    """Sample mean of i.i.d. per-sample values with its standard error.

    ``stderr`` is the sample standard deviation (ddof=1) divided by
    ``sqrt(n_samples)``.  ``lost`` counts samples that never produced a
    value (e.g. walkers that ran out of step budget).
    """

    value: float
    stderr: float
    n_samples: int
    seed: Optional[int] = None
    lost: int = 0

    @classmethod
    def from_samples(cls, samples, seed=None, lost=0, scale=1.0) -> "McEstimate":
        x = np.asarray(samples, dtype=float) * scale
        n = x.size
        if n == 0:
            return cls(float("nan"), float("nan"), 0, seed, lost)
        sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
        # fsum: the mean must not depend on the order samples arrive in
        mean = math.fsum(x.tolist()) / n
        return cls(mean, sd / np.sqrt(n), n, seed, lost)

    def within(self, target: float, n_stderr: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.value - target) <= n_stderr * self.stderr + slack

    def to_dict(self) -> dict:
        return asdict(self)


def binomial_estimate(hits, seed=None) -> McEstimate:
    """Proportion estimate from a boolean array."""
    return McEstimate.from_samples(np.asarray(hits, dtype=float), seed=seed)
