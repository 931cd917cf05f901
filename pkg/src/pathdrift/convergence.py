"""Discretisation error of the path-dependent functional and its density.

Both experiments run on a fine grid where the continuous functional ``A_s``
is approximated by the fine-grid functional; every level ``n`` observes the
same Brownian path through every ``(fine/n)``-th node, so the measured gaps
come from discretisation alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._validation import check_point, check_positive
from .exceptions import DomainError, UnsupportedMethodError
from .girsanov import _product_kernel, default_bandwidth
from .model import FunctionalSpec, PathDependentModel, functional_values
from .rng import as_seed, gaussian_increments, run_blocks, uniform_grid

__all__ = [
    "RateFitResult",
    "GapRow",
    "fine_steps_for",
    "drift_discretization_error",
    "density_rate_experiment",
    "fit_rate",
]

N_SUP_POINTS = 64
N_BOOTSTRAP = 200


def fine_steps_for(levels: Sequence[int], factor: int = 8, sup_points: int = N_SUP_POINTS) -> int:
    """Smallest multiple of every level and of ``sup_points`` that is at least ``factor * max(levels)``."""
    base = sup_points
    for n in levels:
        base = math.lcm(base, int(n))
    target = factor * max(int(n) for n in levels)
    return base * max(1, -(-target // base))


def _check_levels(levels) -> list:
    lv = sorted(int(n) for n in levels)
    if not lv or lv[0] < 1:
        raise DomainError("levels must be positive integers")
    if len(set(lv)) != len(lv):
        raise DomainError("levels must be distinct")
    return lv


def _brownian_states(x, sigma, grid, rng, n):
    inc = gaussian_increments(rng, grid, n, x.size)
    states = np.empty((n, grid.size, x.size))
    states[:, 0, :] = x
    np.cumsum(inc @ sigma.T, axis=1, out=states[:, 1:, :])
    states[:, 1:, :] += x
    return states, inc


def _nu_at(spec, grid, states, query, stride, m):
    st = functional_values(spec, grid, states, query, stride=stride, m=m)
    return np.asarray(spec.nu(*st.as_tuple()), dtype=float)


@dataclass
class GapRow:
    n: int
    error: float
    stderr: float
    s_max: float
    tail_mass: float


def drift_discretization_error(
    spec: FunctionalSpec,
    x,
    t: float,
    n_levels: Sequence[int],
    m: Optional[int],
    p: float = 2.0,
    N: int = 10_000,
    seed=0,
    sigma=1.0,
    fine_steps: Optional[int] = None,
    workers: int = 1,
    block_size: int = 1024,
) -> list:
    """``sup_s E|nu(A_s) - nu(A_s^(n,m))|^p)^{1/p}`` along ``x + sigma W``.

    The sup runs over 64 times in ``(0, t)``, each one fine step before an
    equispaced point; the reported SE is
    the delta-method SE at the maximising time.
    """
    t = check_positive("t", t)
    p = float(p)
    if p < 1:
        raise DomainError("p must be at least 1")
    levels = _check_levels(n_levels)
    x = check_point(x, spec.dim, "x")
    sig = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sig.shape == (1, 1) and spec.dim > 1:
        sig = sig[0, 0] * np.eye(spec.dim)
    fine = fine_steps_for(levels) if fine_steps is None else int(fine_steps)
    for n in levels:
        if fine % n or fine % N_SUP_POINTS:
            raise DomainError(f"fine_steps={fine} must be a multiple of every level and of {N_SUP_POINTS}")
    grid = uniform_grid(t, fine)
    # the fine node just before each sup point; coarse nodes of every level
    # would show no gap at all for functionals of the current state
    query = np.arange(1, N_SUP_POINTS + 1) * (fine // N_SUP_POINTS) - 1

    def task(b, n, rng):
        states, _ = _brownian_states(x, sig, grid, rng, n)
        ref = _nu_at(spec, grid, states, query, 1, None)
        s1 = np.empty((len(levels), query.size))
        s2 = np.empty_like(s1)
        for i, lv in enumerate(levels):
            gap = _nu_at(spec, grid, states, query, fine // lv, m) - ref
            g = np.linalg.norm(gap, axis=-1) ** p
            s1[i] = g.sum(axis=0)
            s2[i] = (g * g).sum(axis=0)
        return s1, s2

    parts = run_blocks(task, N, seed, workers=workers, block_size=block_size)
    s1 = sum(pt[0] for pt in parts)
    s2 = sum(pt[1] for pt in parts)
    mean = s1 / N
    var = np.maximum(s2 / N - mean * mean, 0.0) * N / max(N - 1, 1)
    se_mean = np.sqrt(var / N)
    lp = mean ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_lp = np.where(mean > 0, se_mean * mean ** (1.0 / p - 1.0) / p, 0.0)
    tail = spec.tail_mass(len(spec.delays) if m is None else m)
    rows = []
    for i, lv in enumerate(levels):
        j = int(np.argmax(lp[i]))
        rows.append(GapRow(lv, float(lp[i, j]), float(se_lp[i, j]), float(grid[query[j]]), tail))
    return rows


# ----------------------------------------------------------------------------
# density rate


@dataclass
class RateFitResult:
    levels: list  # (n, error, SE)
    fitted_slope: float
    slope_CI: tuple
    tail_mass: dict = field(default_factory=dict)
    bandwidth: Optional[float] = None
    fine_steps: Optional[int] = None
    abscissa: str = "log(n/log n)"

    @property
    def errors(self) -> np.ndarray:
        return np.array([e for _, e, _ in self.levels])

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.errors) < 0))


def _abscissa(levels, kind: str) -> np.ndarray:
    n = np.asarray(levels, dtype=float)
    if kind == "log(n/log n)":
        return np.log(n / np.log(n))
    if kind == "log n":
        return np.log(n)
    raise DomainError(f"unknown abscissa {kind!r}")


def fit_rate(levels, errors, kind: str = "log(n/log n)") -> float:
    """Minus the least-squares slope of ``log error`` against the abscissa."""
    errors = np.asarray(errors, dtype=float)
    if np.any(~(errors > 0)):
        return math.nan
    return float(-np.polyfit(_abscissa(levels, kind), np.log(errors), 1)[0])


def density_rate_experiment(
    spec: FunctionalSpec,
    model_continuous: PathDependentModel,
    x,
    y,
    t: float,
    n_levels: Sequence[int],
    m: Optional[int],
    N: int,
    h: Optional[float] = None,
    seed=0,
    fine_steps: Optional[int] = None,
    workers: int = 1,
    block_size: int = 2048,
    n_bootstrap: int = N_BOOTSTRAP,
    abscissa: str = "log(n/log n)",
) -> RateFitResult:
    """``|p_t(x, y) - p_t^(n,m)(x, y)|`` per level by coupled Girsanov-kernel estimates.

    Both densities come from the same driftless paths ``Y = x + sigma W`` on
    the fine grid, the same kernel weights and bandwidth; only the drift in
    the Girsanov weight differs (``nu(A_s)`` versus ``nu(A_s^(n,m))``), so
    each path contributes ``K_h(Y_t - y) (Z - Z^(n))``. The slope CI comes
    from a bootstrap over paths.
    """
    if not model_continuous.diffusion_constant:
        raise UnsupportedMethodError("the density rate experiment needs a constant diffusion")
    t = check_positive("t", t)
    levels = _check_levels(n_levels)
    d = spec.dim
    x = check_point(x, d, "x")
    y = check_point(y, d, "y")
    sig = model_continuous.diffusion.matrix()
    sig_inv = model_continuous.diffusion.inverse
    h = default_bandwidth(t, N, d) if h is None else check_positive("h", h)
    fine = fine_steps_for(levels) if fine_steps is None else int(fine_steps)
    for n in levels:
        if fine % n:
            raise DomainError(f"fine_steps={fine} must be a multiple of every level")
    grid = uniform_grid(t, fine)
    dt = np.diff(grid)
    query = np.arange(fine)

    def log_weight(b, inc):
        mu = b * sig_inv[0, 0] if d == 1 else b @ sig_inv.T
        sq = (mu * mu).sum(axis=2) @ dt
        return (mu * inc).reshape(mu.shape[0], -1).sum(axis=1) - 0.5 * sq

    def task(b, n, rng):
        states, inc = _brownian_states(x, sig, grid, rng, n)
        kern = _product_kernel(states[:, -1, :] - y, h)
        lz = log_weight(_nu_at(spec, grid, states, query, 1, None), inc)
        out = np.empty((n, len(levels)))
        for i, lv in enumerate(levels):
            lzn = log_weight(_nu_at(spec, grid, states, query, fine // lv, m), inc)
            out[:, i] = kern * (np.exp(lz) - np.exp(lzn))
        return out

    D = np.concatenate(run_blocks(task, N, seed, workers=workers, block_size=block_size))
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / math.sqrt(N) if N > 1 else np.zeros(len(levels))
    err = np.abs(mean)
    slope = fit_rate(levels, err, abscissa)

    rng = as_seed(seed).stream(1).generator()
    boots = []
    for _ in range(int(n_bootstrap)):
        idx = rng.integers(0, N, N)
        boots.append(fit_rate(levels, np.abs(D[idx].mean(axis=0)), abscissa))
    boots = np.asarray(boots)
    boots = boots[np.isfinite(boots)]
    ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5))) if boots.size else (math.nan, math.nan)
    tail = {int(m if m is not None else len(spec.delays)): spec.tail_mass(len(spec.delays) if m is None else m)}
    return RateFitResult(
        [(lv, float(e), float(s)) for lv, e, s in zip(levels, err, se)], slope, ci, tail, h, fine, abscissa
    )
