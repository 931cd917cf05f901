"""Closed-form densities and Gaussian brackets used as oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from ._validation import check_point, check_positive
from .exceptions import DomainError
from .parametrix import gaussian_density
from .stats import DensityEstimate

__all__ = [
    "bangbang_integral",
    "bangbang_peak_density",
    "bangbang_bracket",
    "sharp_bound_verdict",
    "ou_density",
    "GaussianEnvelope",
    "envelope_bracket",
    "calibrate_envelope",
]

_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


def bangbang_integral(a, c):
    """``int_a^inf z exp(-(z - c)^2 / 2) dz`` in closed form."""
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    u = a - c
    return np.exp(-0.5 * u * u) + c * _SQRT_HALF_PI * erfc(u / math.sqrt(2.0))


def bangbang_peak_density(x, alpha, beta, t, verbatim: bool = False) -> float:
    """Density at ``alpha`` of Brownian motion with drift ``beta * sgn(alpha - Y)``.

    Each coordinate contributes ``k / sqrt(2 pi t) * I(|x - alpha| / sqrt(t),
    beta sqrt(t))`` with ``I`` from :func:`bangbang_integral`. The default
    ``k = 1`` reduces to the heat kernel at ``beta = 0``; ``verbatim=True``
    uses ``k = 2``.
    """
    t = check_positive("t", t)
    x = check_point(x, name="x")
    alpha = check_point(alpha, x.size, "alpha")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), x.shape)
    k = 2.0 if verbatim else 1.0
    st = math.sqrt(t)
    vals = k / math.sqrt(2.0 * math.pi * t) * bangbang_integral(np.abs(x - alpha) / st, beta * st)
    return float(np.prod(vals))


def bangbang_bracket(x, y, t, b_sup, verbatim: bool = False) -> tuple:
    """``(q^{y,-B}_t(x, y), q^{y,B}_t(x, y))`` for ``B = b_sup``."""
    if b_sup < 0:
        raise DomainError("b_sup must be nonnegative")
    return (
        bangbang_peak_density(x, y, -b_sup, t, verbatim),
        bangbang_peak_density(x, y, b_sup, t, verbatim),
    )


def sharp_bound_verdict(p_hat: DensityEstimate, x, y, t, b_sup, k: float = 3.0, verbatim: bool = False) -> str:
    """``pass`` if the ``k``-SE interval sits inside the bang-bang bracket,
    ``fail`` if it misses the bracket entirely, ``inconclusive`` otherwise."""
    lo, hi = bangbang_bracket(x, y, t, b_sup, verbatim)
    a, b = p_hat.interval(k)
    if lo <= a and b <= hi:
        return "pass"
    if b < lo or a > hi:
        return "fail"
    return "inconclusive"


def ou_density(x, y, t, kappa, sigma=1.0) -> float:
    """Transition density of ``dX = -kappa X dt + sigma dW`` (one dimension)."""
    t = check_positive("t", t)
    sigma = check_positive("sigma", sigma)
    kt = kappa * t
    mean = x * math.exp(-kt)
    # (1 - e^{-2 kt}) / (2 kappa) = t * expm1(-2kt) / (-2kt), stable as kappa -> 0
    factor = 1.0 if kt == 0 else -math.expm1(-2.0 * kt) / (2.0 * kt)
    var = sigma * sigma * t * factor
    if not var > 0:
        raise DomainError("OU variance is not positive")
    return float(math.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var))


@dataclass(frozen=True)
class GaussianEnvelope:
    C_minus: float
    c_minus: float
    C_plus: float
    c_plus: float

    def __post_init__(self):
        for name in ("C_minus", "c_minus", "C_plus", "c_plus"):
            check_positive(name, getattr(self, name))


def envelope_bracket(env: GaussianEnvelope, x, y, t) -> tuple:
    """``(C_- g_{c_- t}(x, y), C_+ g_{c_+ t}(x, y))`` with ``g`` the heat kernel."""
    t = check_positive("t", t)
    x = check_point(x, name="x")
    y = check_point(y, x.size, "y")
    eye = np.eye(x.size)
    lo = env.C_minus * float(gaussian_density(env.c_minus * t * eye, x, y))
    hi = env.C_plus * float(gaussian_density(env.c_plus * t * eye, x, y))
    return lo, hi


@dataclass
class EnvelopeFit:
    envelope: GaussianEnvelope
    c_fit: float
    C_fit: float
    residual: float


def calibrate_envelope(estimates, t: float, margin: float = 0.25, k: float = 3.0) -> EnvelopeFit:
    """Fit ``log p = log C - d/2 log(2 pi c t) - |y - x|^2 / (2 c t)`` by least squares.

    ``estimates`` is a sequence of :class:`DensityEstimate` carrying ``x`` and
    ``y``. The bracket uses ``c_- = c / (1 + margin)`` and ``c_+ = c (1 +
    margin)``; ``C_-`` and ``C_+`` are the extreme constants that keep every
    ``k``-SE interval inside it.
    """
    t = check_positive("t", t)
    ests = [e for e in estimates if e.value > 0]
    if len(ests) < 2:
        raise DomainError("calibration needs at least two positive estimates")
    d = np.atleast_1d(ests[0].x).size
    r2 = np.array([float(np.sum((np.atleast_1d(e.y) - np.atleast_1d(e.x)) ** 2)) for e in ests])
    logp = np.log([e.value for e in ests])
    u = r2 / (2.0 * t)
    if np.ptp(u) > 0:
        slope, intercept = np.polyfit(u, logp, 1)
    else:
        slope, intercept = -1.0, float(np.mean(logp) + u[0])
    c = 1.0 / -slope if slope < 0 else 1.0
    C = math.exp(intercept) * (2.0 * math.pi * c * t) ** (d / 2.0)
    resid = float(np.sqrt(np.mean((logp - (intercept + slope * u)) ** 2)))
    c_lo, c_hi = c / (1.0 + margin), c * (1.0 + margin)
    eye = np.eye(d)
    lows, highs = [], []
    for e in ests:
        lo_v, hi_v = e.interval(k)
        g_lo = float(gaussian_density(c_lo * t * eye, e.x, e.y))
        g_hi = float(gaussian_density(c_hi * t * eye, e.x, e.y))
        lows.append(max(lo_v, 1e-300) / g_lo)
        highs.append(hi_v / g_hi)
    env = GaussianEnvelope(min(lows), c_lo, max(highs), c_hi)
    return EnvelopeFit(env, c, C, resid)
