"""Time-stepping schemes.

``euler_maruyama`` handles Markovian and path-dependent drifts alike (the
latter read the growing ``PathHistory``). ``em_path_dependent`` is the Euler
scheme whose drift sees the discretised functional ``A^(n,m)``. The tamed
one-step construction replaces the last step of length ``eps`` before ``t``
by a single step with tamed coefficients, coupled to a fine Euler proxy on
the same Brownian path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._validation import check_grid, check_point, check_positive
from .exceptions import DomainError, NumericError, UnsupportedMethodError
from .model import FunctionalDrift, FunctionalSpec, PathDependentModel, PathHistory
from .rng import DiscretePath, as_seed, normals, run_blocks, uniform_grid
from .stats import Moments, merge_all


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.all(np.isfinite(x.reshape(x.shape[0], -1)), axis=1))
        raise NumericError(
            f"non-finite state at step {step} in {bad.size} path(s)", step=step, state=x[bad[0]]
        )


def step_paths(model: PathDependentModel, x0, grid, rng, n_paths: int, keep: bool = False, drift=None):
    """Run the Euler scheme on a batch and return ``(terminal, history, increments)``.

    Increments are drawn step-major, one ``(n_paths, d)`` block per step.
    ``history`` and ``increments`` are ``None`` unless ``keep`` is set (or the
    drift is path-dependent, which needs the history).
    """
    drift = model.drift if drift is None else drift
    diff = model.diffusion
    d = model.dim
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, d)).copy()
    need_hist = keep or not drift.markovian
    hist = PathHistory(grid, x, n_paths) if need_hist else None
    incs = np.empty((n_paths, grid.size - 1, d)) if keep else None
    for k in range(grid.size - 1):
        dt = grid[k + 1] - grid[k]
        dw = normals(rng, (n_paths, d))
        dw *= math.sqrt(dt)
        with np.errstate(over="ignore", invalid="ignore"):
            b = drift.evaluate(hist) if hist is not None else drift.value(grid[k], x)
            x = x + b * dt + diff.apply(grid[k], x, dw)
        _check_finite(x, k + 1)
        if hist is not None:
            hist.push(x)
        if keep:
            incs[:, k, :] = dw
    return x, hist, incs


def euler_maruyama(model: PathDependentModel, x0, grid, seed, n_paths: Optional[int] = None) -> DiscretePath:
    """Euler-Maruyama path(s) on ``grid`` with the driving increments stored."""
    grid = check_grid(grid)
    x0 = check_point(x0, model.dim, "x0")
    rng = as_seed(seed).generator()
    n = 1 if n_paths is None else int(n_paths)
    _, hist, incs = step_paths(model, x0, grid, rng, n, keep=True)
    if n_paths is None:
        return DiscretePath(grid, hist.buffer[0], incs[0])
    return DiscretePath(grid, hist.buffer, incs)


def em_path_dependent(
    spec: FunctionalSpec,
    model: PathDependentModel,
    x0,
    n: int,
    m: Optional[int],
    seed,
    T: Optional[float] = None,
    n_paths: Optional[int] = None,
) -> DiscretePath:
    """Euler scheme driven by ``nu(A^(n,m))`` on the uniform ``n``-step grid.

    The drift over ``[t_k, t_{k+1})`` is frozen at ``t_k``: time ``t_k``,
    state ``w_{t_k}``, running max of ``zeta`` over nodes, delayed states
    floored onto the grid with slots beyond ``m`` set to zero, and the
    left-rule integral up to ``t_k``.
    """
    if int(m if m is not None else 0) < 0:
        raise DomainError("m must be nonnegative")
    T = model.T if T is None else check_positive("T", T)
    grid = uniform_grid(T, n)
    pd_model = model.with_drift(FunctionalDrift(spec, m=m))
    return euler_maruyama(pd_model, x0, grid, seed, n_paths=n_paths)


# ----------------------------------------------------------------------------
# taming


def tame_drift(b_val, x, ell: float, epsilon: float):
    """``b / (1 + sqrt(eps) |x|^ell)``."""
    _check_eps(epsilon)
    return np.asarray(b_val) / (1.0 + math.sqrt(epsilon) * np.abs(x) ** ell)


def tame_diffusion(sigma_val, x, ell: float, epsilon: float):
    """``sigma / (1 + sqrt(eps) |x|^(ell/2))``."""
    _check_eps(epsilon)
    return np.asarray(sigma_val) / (1.0 + math.sqrt(epsilon) * np.abs(x) ** (0.5 * ell))


def _check_eps(epsilon):
    # eps = 1 is accepted so that the taming map can be evaluated at its edge
    if not 0.0 < float(epsilon) <= 1.0:
        raise DomainError(f"epsilon must lie in (0, 1], got {epsilon!r}")


@dataclass(frozen=True)
class TamedCoefficients:
    """Taming exponent and the Khasminskii exponents it must respect."""

    ell: float
    epsilon: float
    p0: float = 3.0
    p1: float = 3.0
    K: float = 1.0

    def __post_init__(self):
        if not (self.p0 > 2 and self.p1 > 2):
            raise DomainError("Khasminskii exponents must exceed 2")
        if not 0 < self.ell <= (self.p0 - 2) / 4 + 1e-15:
            raise DomainError(f"ell must lie in (0, (p0-2)/4] = (0, {(self.p0 - 2) / 4}]")
        if not 0 < self.epsilon < 1:
            raise DomainError("epsilon must lie in (0, 1)")

    def drift(self, b_val, x):
        return tame_drift(b_val, x, self.ell, self.epsilon)

    def diffusion(self, sigma_val, x):
        return tame_diffusion(sigma_val, x, self.ell, self.epsilon)


def _window_grid(t: float, epsilons: Sequence[float], base_step: float, window_steps: int):
    """Base grid up to ``t - eps_max`` plus a fine window containing every ``t - eps``."""
    eps_max = max(epsilons)
    t0 = t - eps_max
    n_base = max(1, int(math.ceil(t0 / base_step - 1e-9))) if t0 > 0 else 0
    base = np.linspace(0.0, t0, n_base + 1) if n_base else np.array([0.0])
    h = eps_max / window_steps
    window = t0 + h * np.arange(1, window_steps + 1)
    window[-1] = t
    grid = np.concatenate([base, window])
    starts = []
    for eps in epsilons:
        j = (eps_max - eps) / h
        if abs(j - round(j)) > 1e-6:
            raise DomainError(f"t - eps is not a window node for eps={eps}")
        starts.append(base.size - 1 + int(round(j)))
    return grid, starts


def window_steps_for(epsilons: Sequence[float], fine_steps: int) -> int:
    """Smallest window resolution meeting ``h <= 1/fine_steps`` with every ``t - eps`` on a node.

    ``fine_steps`` defaults elsewhere to ``ceil(10 / min(eps)^2)``.
    """
    eps = np.asarray(epsilons, dtype=float)
    eps_max = float(eps.max())
    M = int(math.ceil(eps_max * fine_steps - 1e-9))
    ratios = eps_max / eps
    if np.any(np.abs(ratios - np.round(ratios)) > 1e-9):
        raise DomainError("every epsilon must divide the largest one")
    # t - eps is a node iff M * eps / eps_max is an integer
    q = math.lcm(*(int(round(r)) for r in ratios))
    return int(math.ceil(M / q)) * q


def _tamed_models_check(model: PathDependentModel):
    if model.dim != 1:
        raise UnsupportedMethodError("tamed schemes are implemented for d = 1 only")
    if not model.drift.markovian:
        raise UnsupportedMethodError("tamed schemes need a Markovian drift")


def _coupled_block(model, x0, t, epsilons, grid, starts, rng, n, ell):
    """Fine proxy at ``t`` and the tamed terminal for every eps on one block."""
    drift, diff = model.drift, model.diffusion
    x = np.full((n, 1), float(x0[0]))
    start_at = {s: i for i, s in enumerate(starts)}
    snap = {}
    w_at = {}
    w = np.zeros((n, 1))
    failed = np.zeros(n, dtype=bool)
    for k in range(grid.size - 1):
        if k in start_at:
            snap[k] = x.copy()
            w_at[k] = w.copy()
        dt = grid[k + 1] - grid[k]
        dw = normals(rng, (n, 1))
        dw *= math.sqrt(dt)
        w += dw
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + drift.value(grid[k], x) * dt + diff.apply(grid[k], x, dw)
        bad = ~np.isfinite(x[:, 0])
        if bad.any():
            failed |= bad
            x[bad] = 0.0
    proxy = x[:, 0].copy()
    tamed = np.empty((len(epsilons), n))
    for i, (eps, s) in enumerate(zip(epsilons, starts)):
        xs = snap[s]
        ts = grid[s]
        dws = w - w_at[s]
        b = tame_drift(drift.value(ts, xs), xs, ell, eps)
        sig = tame_diffusion(diff.diag(ts, xs) if hasattr(diff, "diag") else diff.matrix(ts, xs)[..., 0], xs, ell, eps)
        tamed[i] = (xs + b * eps + sig * dws)[:, 0]
    return proxy, tamed, failed


def one_step_tamed_terminal(
    model: PathDependentModel,
    x0,
    t: float,
    epsilon: float,
    fine_steps: int = 4096,
    seed=0,
    n_paths: int = 1,
    ell: float = 0.25,
    window_fine_steps: Optional[int] = None,
):
    """Return ``(proxy, tamed)`` terminal values on shared noise.

    The proxy is Euler with step ``1/fine_steps`` up to ``t - eps`` and a
    window step no larger than ``min(1/fine_steps, eps^2/10)`` afterwards.
    """
    _tamed_models_check(model)
    t = check_positive("t", t)
    if not 0 < epsilon < t:
        raise DomainError("epsilon must satisfy 0 < eps < t")
    _check_eps(epsilon)
    x0 = check_point(x0, 1, "x0")
    wf = window_fine_steps or max(int(fine_steps), int(math.ceil(10.0 / epsilon ** 2)))
    M = window_steps_for([epsilon], wf)
    grid, starts = _window_grid(t, [epsilon], 1.0 / fine_steps, M)
    proxy, tamed, failed = _coupled_block(model, x0, t, [epsilon], grid, starts, as_seed(seed).generator(), int(n_paths), ell)
    if failed.any():
        raise NumericError("fine Euler proxy produced non-finite values", step=None)
    return proxy, tamed[0]


@dataclass
class SweepRow:
    epsilon: float
    mse: float
    stderr: Optional[float]
    n_samples: int
    status: str = "ok"


@dataclass
class SweepResult:
    rows: list
    slope: float
    intercept: float
    window_steps: int
    base_step: float

    def table(self):
        return [(r.epsilon, r.mse, r.stderr) for r in self.rows]


def loglog_slope(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def strong_error_sweep(
    model: PathDependentModel,
    x0,
    t: float,
    epsilons: Sequence[float],
    N: int,
    seed=0,
    ell: float = 0.25,
    fine_steps: int = 4096,
    window_fine_steps: Optional[int] = None,
    workers: int = 1,
    block_size: int = 32768,
) -> SweepResult:
    """Mean-square gap ``E|X_t - X_t^(eps)|^2`` for each eps, on shared paths.

    One simulation serves every eps: the window ``[t - eps_max, t]`` is
    resolved finely enough that each ``t - eps`` is a node and the window step
    is at most ``min(eps)^2 / 10``.
    """
    _tamed_models_check(model)
    eps = [float(e) for e in epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise DomainError("epsilons must be strictly decreasing")
    if max(eps) >= t:
        raise DomainError("every epsilon must be smaller than t")
    x0 = check_point(x0, 1, "x0")
    wf = window_fine_steps or max(int(fine_steps), int(math.ceil(10.0 / min(eps) ** 2)))
    M = window_steps_for(eps, wf)
    grid, starts = _window_grid(t, eps, 1.0 / fine_steps, M)

    def task(b, n, rng):
        proxy, tamed, failed = _coupled_block(model, x0, t, eps, grid, starts, rng, n, ell)
        with np.errstate(over="ignore", invalid="ignore"):
            sq = (proxy[None, :] - tamed) ** 2
        parts, nbad = [], []
        for i in range(len(eps)):
            ok = np.isfinite(sq[i]) & ~failed
            parts.append(Moments.from_array(sq[i][ok]))
            nbad.append(int(np.sum(~ok)))
        return parts, nbad

    results = run_blocks(task, N, seed, workers=workers, block_size=block_size)
    rows = []
    for i, e in enumerate(eps):
        mom = merge_all(r[0][i] for r in results)
        nbad = sum(r[1][i] for r in results)
        status = "ok" if nbad == 0 else f"{nbad} non-finite replications dropped"
        rows.append(SweepRow(e, mom.mean if mom.n else math.nan, mom.stderr, mom.n, status))
    good = [r for r in rows if r.n_samples and r.mse > 0]
    if len(good) >= 2:
        slope, icpt = loglog_slope([r.epsilon for r in good], [r.mse for r in good])
    else:
        slope, icpt = math.nan, math.nan
    return SweepResult(rows, slope, icpt, M, 1.0 / fine_steps)


def simulate_terminal(
    model: PathDependentModel,
    x0,
    t: float,
    N: int,
    n_steps: int,
    seed=0,
    workers: int = 1,
    block_size: int = 8192,
    tamed_ell: Optional[float] = None,
) -> np.ndarray:
    """Terminal values ``X_t`` of ``N`` Euler paths, in block order.

    With ``tamed_ell`` set each step uses coefficients tamed with
    ``eps = step`` (useful for super-linear models).
    """
    x0 = check_point(x0, model.dim, "x0")
    grid = uniform_grid(t, n_steps)
    if tamed_ell is None:
        def task(b, n, rng):
            return step_paths(model, x0, grid, rng, n)[0]
    else:
        _tamed_models_check(model)
        h = grid[1]

        def task(b, n, rng):
            x = np.full((n, 1), float(x0[0]))
            for k in range(grid.size - 1):
                dw = normals(rng, (n, 1)) * math.sqrt(h)
                bx = tame_drift(model.drift.value(grid[k], x), x, tamed_ell, h)
                sx = tame_diffusion(model.diffusion.diag(grid[k], x), x, tamed_ell, h)
                x = x + bx * h + sx * dw
            _check_finite(x, grid.size - 1)
            return x

    return np.concatenate(run_blocks(task, N, seed, workers=workers, block_size=block_size), axis=0)
