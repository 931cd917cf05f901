"""Single-pass moment accumulation with an associative merge."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


@dataclass(frozen=True)
class Moments:
    """Count, mean and central moment sums ``M2, M3, M4`` of a sample.

    ``merge`` uses the pairwise update of Chan, Golub and LeVeque, so that
    partial aggregates from independent blocks can be combined in a fixed
    order with bit-stable results.
    """

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def from_array(cls, values) -> "Moments":
        v = np.asarray(values, dtype=float).ravel()
        n = v.size
        if n == 0:
            return cls()
        # shift by the first value: exact for constant samples, better conditioned
        shift = v[0]
        mean = float(shift + np.mean(v - shift))
        dev = v - mean
        d2 = dev * dev
        return cls(n, mean, float(d2.sum()), float((d2 * dev).sum()), float((d2 * d2).sum()))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + nb * d_n
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (
            self.m3
            + other.m3
            + delta * d_n * d_n * na * nb * (na - nb)
            + 3.0 * d_n * (na * other.m2 - nb * self.m2)
        )
        m4 = (
            self.m4
            + other.m4
            + delta * d_n ** 3 * na * nb * (na * na - na * nb + nb * nb)
            + 6.0 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
            + 4.0 * d_n * (na * other.m3 - nb * self.m3)
        )
        return Moments(n, mean, m2, m3, m4)

    def __add__(self, other: "Moments") -> "Moments":
        return self.merge(other)

    @property
    def variance(self) -> Optional[float]:
        if self.n < 2:
            return None
        return self.m2 / (self.n - 1)

    @property
    def stderr(self) -> Optional[float]:
        var = self.variance
        if var is None:
            return None
        return math.sqrt(max(var, 0.0) / self.n)

    @property
    def kurtosis(self) -> Optional[float]:
        """Excess kurtosis (plug-in); ``None`` for degenerate samples."""
        if self.n < 2 or self.m2 <= 0.0:
            return None
        return self.n * self.m4 / (self.m2 * self.m2) - 3.0


def merge_all(parts: Iterable[Moments]) -> Moments:
    total = Moments()
    for part in parts:
        total = total.merge(part)
    return total


def aggregate(samples) -> tuple:
    """Return ``(mean, stderr, n, kurtosis)``; ``stderr`` is ``None`` when n < 2."""
    if isinstance(samples, Moments):
        mom = samples
    else:
        mom = Moments.from_array(np.fromiter(samples, dtype=float) if not hasattr(samples, "__len__") else samples)
    return mom.mean, mom.stderr, mom.n, mom.kurtosis


METHODS = ("girsanov-kernel", "first-order", "unbiased", "em-kernel")


@dataclass
class DensityEstimate:
    """Monte Carlo estimate of ``p_t(x, y)`` with its standard error.

    ``value`` may be negative only for the signed ``unbiased`` method.
    ``extras`` holds method-specific diagnostics (kurtosis, mean jumps...).
    """

    value: float
    stderr: Optional[float]
    n_samples: int
    method: str
    bandwidth: Optional[float] = None
    seed: object = None
    x: object = None
    y: object = None
    t: Optional[float] = None
    extras: dict = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.stderr is not None and not self.stderr >= 0:
            raise ValueError("stderr must be nonnegative")
        if self.extras is None:
            self.extras = {}

    def interval(self, k: float = 3.0) -> tuple:
        se = 0.0 if self.stderr is None else self.stderr
        return self.value - k * se, self.value + k * se

    @classmethod
    def from_moments(cls, mom: Moments, method: str, **kw) -> "DensityEstimate":
        return cls(float(mom.mean), mom.stderr, int(mom.n), method, **kw)
