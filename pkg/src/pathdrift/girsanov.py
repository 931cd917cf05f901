"""Girsanov weights and the two Girsanov-based density estimators.

For ``mu = sigma^{-1} b`` the weight of a driftless path ``Y`` is

    Z_t(q) = exp(sum_k q mu_k . dW_k - 1/2 sum_k |q mu_k|^2 dt_k)

with left-point (Ito) sums on the simulation grid. ``GirsanovKernelDensity``
smooths ``E[Z_t 1{Y_t in dy}]`` with a product Gaussian kernel;
``FirstOrderDensity`` adds to the Gaussian leading term the time integral of
``E[<grad_x q(s, X_s; t, y), b(s, X)>]`` along Euler paths of the full SDE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.special import roots_legendre
from sklearn.base import BaseEstimator

from ._validation import check_point, check_points, check_positive
from .exceptions import DomainError, NumericError, UnsupportedMethodError
from .model import PathDependentModel, PathHistory
from .parametrix import gaussian_density
from .rng import DEFAULT_BLOCK_SIZE, DiscretePath, as_seed, merge_grids, normals, run_blocks, uniform_grid
from .schemes import step_paths
from .stats import DensityEstimate, Moments, merge_all

__all__ = [
    "DensityEstimate",
    "GirsanovAccumulator",
    "girsanov_weight",
    "martingale_check",
    "novikov_partition",
    "t_threshold",
    "z_moment_bound",
    "GirsanovKernelDensity",
    "FirstOrderDensity",
    "density_girsanov_kernel",
    "density_first_order",
    "holder_modulus_diagnostic",
    "holder_scaling",
]


# ----------------------------------------------------------------------------
# the weight


class GirsanovAccumulator:
    """Running log-weight ``sum q mu.dW - 1/2 sum |q mu|^2 dt`` over a batch."""

    def __init__(self, q: float = 1.0, n_paths: int = 1):
        self.q = float(q)
        self.log_weight = np.zeros(int(n_paths))
        self.steps = 0

    def update(self, mu, dw, dt):
        """Add one left-point step; ``mu`` and ``dw`` are ``(N, d)``."""
        if self.q != 0.0:
            qmu = self.q * np.asarray(mu, dtype=float)
            self.log_weight += np.sum(qmu * dw, axis=-1) - 0.5 * np.sum(qmu * qmu, axis=-1) * dt
        self.steps += 1
        return self

    @property
    def weight(self) -> np.ndarray:
        return np.exp(self.log_weight)


def _mu(model, t, x, b):
    try:
        mu = model.diffusion.inverse_apply(t, x, b)
    except NumericError:
        raise
    if not np.all(np.isfinite(mu)):
        raise NumericError("sigma is singular at a node", state=np.asarray(x))
    return mu


def girsanov_weight(model: PathDependentModel, driftless_path: DiscretePath, q: float = 1.0):
    """``Z_t(q)`` of a driftless path (or batch) that carries its increments."""
    path = driftless_path
    if path.increments is None:
        raise DomainError("the driftless path must carry its Brownian increments")
    states, incs = path.batch_states(), path.batch_increments()
    dt = np.diff(path.grid)
    b = model.drift.along_path(path.grid, states)
    t_left = np.broadcast_to(path.grid[:-1], states.shape[:1] + (dt.size,))
    mu = _mu(model, t_left, states[:, :-1, :], b)
    qmu = float(q) * mu
    logz = np.sum(qmu * incs, axis=(1, 2)) - 0.5 * np.sum(np.sum(qmu * qmu, axis=2) * dt, axis=1)
    z = np.exp(logz)
    return z if path.is_batch else float(z[0])


def driftless_with_weight(model, x0, grid, rng, n, q: float = 1.0, keep_path: bool = False):
    """Simulate ``Y = x0 + int sigma(Y) dW`` and accumulate ``log Z`` on the fly.

    Returns ``(Y_T, log Z, history)``; ``history`` is kept for path-dependent
    drifts (or when asked).
    """
    drift, diff = model.drift, model.diffusion
    d = model.dim
    y = np.broadcast_to(np.asarray(x0, dtype=float), (n, d)).copy()
    hist = PathHistory(grid, y, n) if (keep_path or not drift.markovian) else None
    acc = GirsanovAccumulator(q, n)
    zero_q = q == 0.0 or getattr(drift, "kind", "") == "zero"
    for k in range(grid.size - 1):
        dt = grid[k + 1] - grid[k]
        dw = normals(rng, (n, d))
        dw *= math.sqrt(dt)
        if not zero_q:
            b = drift.evaluate(hist) if hist is not None else drift.value(grid[k], y)
            acc.update(_mu(model, grid[k], y, b), dw, dt)
        y = y + diff.apply(grid[k], y, dw)
        if hist is not None:
            hist.push(y)
    return y, acc.log_weight, hist


def martingale_check(
    model: PathDependentModel,
    t: float,
    N: int,
    seed=0,
    x0=None,
    n_steps: int = 1024,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
):
    """MC estimate of ``E[Z_t(1)]``; returns ``(mean, stderr, passed)``."""
    t = check_positive("t", t)
    x0 = np.zeros(model.dim) if x0 is None else check_point(x0, model.dim, "x0")
    grid = uniform_grid(t, n_steps)

    def task(b, n, rng):
        _, logz, _ = driftless_with_weight(model, x0, grid, rng, n)
        return Moments.from_array(np.exp(logz))

    mom = merge_all(run_blocks(task, N, seed, workers=workers, block_size=block_size))
    se = mom.stderr or 0.0
    return mom.mean, se, abs(mom.mean - 1.0) <= 3.0 * se


# ----------------------------------------------------------------------------
# analytic quantities


def novikov_partition(T, q, K, a_lower, c_hat_plus) -> np.ndarray:
    """Coarsest uniform partition of ``[0, T]`` with mesh ``<= 1/(2 a |qK|^2 c T)``."""
    for name, v in (("T", T), ("q", abs(q)), ("K", K), ("a_lower", a_lower), ("c_hat_plus", c_hat_plus)):
        check_positive(name, v)
    bound = 1.0 / (2.0 * a_lower * (q * K) ** 2 * c_hat_plus * T)
    if bound >= T:
        return np.array([0.0, float(T)])
    n = int(math.ceil(T / bound - 1e-12))
    grid = np.linspace(0.0, T, n + 1)
    grid[-1] = T
    return grid


def t_threshold(r, K, a_lower, c_hat_plus, T) -> float:
    """``t_r = min(T, 1 / (2K sqrt(3 a (2r^2 - r) c)))``; ``T`` when ``2r^2 - r <= 0``."""
    T = check_positive("T", T)
    e = 2.0 * r * r - r
    if e <= 0:
        return T
    for name, v in (("K", K), ("a_lower", a_lower), ("c_hat_plus", c_hat_plus)):
        check_positive(name, v)
    return min(T, 1.0 / (2.0 * K * math.sqrt(3.0 * a_lower * e * c_hat_plus)))


def z_moment_bound(
    r,
    t,
    x,
    K,
    a_lower,
    c_hat_plus,
    C_hat_plus,
    T,
    K_T_of_delta: Optional[Callable[[float], float]] = None,
    d: Optional[int] = None,
) -> float:
    """Upper bound on ``sup_{s<=t} E[Z_s(1)^r]`` (three cases).

    ``K_T_of_delta`` supplies the sub-linear growth constant for the case
    ``t > t_r``; ``d`` defaults to the length of ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size if d is None else int(d)
    t = check_positive("t", t)
    e = 2.0 * r * r - r
    if e <= 0:
        return 1.0
    tr = t_threshold(r, K, a_lower, c_hat_plus, T)
    x2 = float(x @ x)
    if t <= tr:
        return 2.0 ** (1 + d / 4.0) * C_hat_plus * math.exp(1.5 * K * K * a_lower * e * t * (1.0 + x2))
    if K_T_of_delta is None:
        raise DomainError("the case t > t_r needs the sub-linear growth table K_T(delta)")
    delta = 1.0 / (2.0 * T * math.sqrt(3.0 * c_hat_plus * a_lower * e))
    kd = float(K_T_of_delta(delta))
    return (
        2.0 ** (1 + d / 4.0)
        * (T / tr) ** (d / 4.0)
        * math.sqrt(C_hat_plus)
        * math.exp(1.5 * a_lower * e * kd * kd * t)
        * math.exp(x2 / (8.0 * c_hat_plus * T))
    )


# ----------------------------------------------------------------------------
# kernel estimator


def default_bandwidth(t: float, N: int, d: int) -> float:
    return (float(t) / float(N)) ** (1.0 / (d + 4))


def _product_kernel(diff, h):
    """Product Gaussian kernel ``prod_i phi(diff_i / h) / h`` over the last axis."""
    d = diff.shape[-1]
    return np.exp(-0.5 * np.sum(diff * diff, axis=-1) / (h * h)) / ((2.0 * math.pi) ** (0.5 * d) * h ** d)


class _DensityBase(BaseEstimator):
    method = ""

    def _check_common(self):
        if self.model is None:
            raise DomainError(f"{type(self).__name__} needs a model")
        self.t_ = check_positive("t", self.t)
        if int(self.n_samples) < 1:
            raise DomainError("n_samples must be positive")
        self.seed_ = as_seed(self.seed)

    def predict(self, Y) -> np.ndarray:
        return np.array([e.value for e in self.estimate(Y)])


class GirsanovKernelDensity(_DensityBase):
    """Kernel-smoothed Girsanov estimator of ``y -> p_t(x, y)``.

    ``fit(x)`` simulates ``n_samples`` driftless paths from ``x`` on a uniform
    grid of ``n_steps`` steps and stores ``(Y_t, Z_t)``; ``predict(Y)`` then
    evaluates ``mean(K_h(Y_t - y) Z_t)`` at each target.
    """

    method = "girsanov-kernel"

    def __init__(
        self,
        model=None,
        t=1.0,
        bandwidth=None,
        n_samples=10_000,
        n_steps=256,
        seed=0,
        workers=1,
        block_size=DEFAULT_BLOCK_SIZE,
        q=1.0,
    ):
        self.model = model
        self.t = t
        self.bandwidth = bandwidth
        self.n_samples = n_samples
        self.n_steps = n_steps
        self.seed = seed
        self.workers = workers
        self.block_size = block_size
        self.q = q

    def fit(self, X, y=None):
        self._check_common()
        model = self.model
        self.x_ = check_point(np.ravel(X), model.dim, "x")
        if self.bandwidth is None:
            self.bandwidth_ = default_bandwidth(self.t_, self.n_samples, model.dim)
        else:
            self.bandwidth_ = check_positive("bandwidth", self.bandwidth)
        grid = uniform_grid(self.t_, self.n_steps)

        def task(b, n, rng):
            yt, logz, _ = driftless_with_weight(model, self.x_, grid, rng, n, q=self.q)
            return yt, logz

        parts = run_blocks(task, self.n_samples, self.seed_, workers=self.workers, block_size=self.block_size)
        self.endpoints_ = np.concatenate([p[0] for p in parts])
        self.weights_ = np.exp(np.concatenate([p[1] for p in parts]))
        if not np.all(np.isfinite(self.weights_)):
            raise NumericError("Girsanov weight overflowed")
        return self

    def sample_contributions(self, y) -> np.ndarray:
        y = check_point(y, self.model.dim, "y")
        return _product_kernel(self.endpoints_ - y, self.bandwidth_) * self.weights_

    def estimate(self, Y) -> list:
        Y = check_points(Y, self.model.dim, "Y")
        out = []
        bs = int(self.block_size)
        for y in Y:
            vals = self.sample_contributions(y)
            mom = merge_all(Moments.from_array(vals[i:i + bs]) for i in range(0, vals.size, bs))
            out.append(
                DensityEstimate.from_moments(
                    mom, self.method, bandwidth=self.bandwidth_, seed=self.seed_, x=self.x_.copy(), y=y.copy(),
                    t=self.t_, extras={"n_steps": int(self.n_steps)},
                )
            )
        return out


# ----------------------------------------------------------------------------
# first-order representation


def first_order_nodes(t: float, quad_nodes: int):
    """Times and weights for ``int_0^t f(s) ds`` after ``s = t (1 - u^2)``."""
    u, w = roots_legendre(int(quad_nodes))
    u = 0.5 * (u + 1.0)
    w = 0.5 * w
    s = t * (1.0 - u * u)
    ws = w * 2.0 * t * u
    order = np.argsort(s)
    return s[order], ws[order]


class FirstOrderDensity(_DensityBase):
    """Gaussian leading term plus the time integral of the drift correction.

    Needs a constant diffusion, for which ``q(s, x; t, y) = g_{(t-s)a}(x, y)``
    and ``grad_x q = A^{-1} (y - x) q``. The expectation at each quadrature
    time is taken along Euler paths of the full SDE simulated on the uniform
    grid refined by the quadrature times.
    """

    method = "first-order"

    def __init__(
        self,
        model=None,
        t=1.0,
        quad_nodes=24,
        n_samples=10_000,
        n_steps=256,
        seed=0,
        workers=1,
        block_size=DEFAULT_BLOCK_SIZE,
    ):
        self.model = model
        self.t = t
        self.quad_nodes = quad_nodes
        self.n_samples = n_samples
        self.n_steps = n_steps
        self.seed = seed
        self.workers = workers
        self.block_size = block_size

    def fit(self, X, y=None):
        self._check_common()
        model = self.model
        if not model.diffusion_constant:
            raise UnsupportedMethodError(
                "the first-order representation needs a constant diffusion; use the unbiased estimator"
            )
        self.x_ = check_point(np.ravel(X), model.dim, "x")
        s, w = first_order_nodes(self.t_, self.quad_nodes)
        self.nodes_, self.node_weights_ = s, w
        self.grid_ = merge_grids(uniform_grid(self.t_, self.n_steps), s)
        self.node_index_ = np.searchsorted(self.grid_, s - 1e-12)
        if not np.allclose(self.grid_[self.node_index_], s, rtol=0, atol=1e-11):
            raise NumericError("quadrature nodes were not placed on the simulation grid")
        # snap nodes onto the grid values actually simulated
        self.nodes_ = self.grid_[self.node_index_]
        self.a_ = model.diffusion.covariance()
        self.zero_drift_ = getattr(model.drift, "kind", "") == "zero"
        if self.zero_drift_:
            self.states_ = None
            self.drifts_ = None
            return self
        grid, idx = self.grid_, self.node_index_

        def task(b, n, rng):
            _, hist, _ = step_paths(model, self.x_, grid, rng, n, keep=True)
            xs = hist.buffer[:, idx, :]
            if model.drift.markovian:
                bs = model.drift.value(np.broadcast_to(grid[idx], xs.shape[:-1]), xs)
            else:
                bs = np.empty_like(xs)
                for j, k in enumerate(idx):
                    hist.seek(k)
                    bs[:, j, :] = model.drift.evaluate(hist)
            return xs, bs

        parts = run_blocks(task, self.n_samples, self.seed_, workers=self.workers, block_size=self.block_size)
        self.states_ = np.concatenate([p[0] for p in parts])
        self.drifts_ = np.concatenate([p[1] for p in parts])
        return self

    def leading_term(self, y) -> float:
        return float(gaussian_density(self.t_ * self.a_, self.x_, y))

    def sample_contributions(self, y) -> np.ndarray:
        """Per-path quadrature sum of ``<grad_x q(s, X_s; t, y), b(s, X)>``."""
        y = check_point(y, self.model.dim, "y")
        if self.zero_drift_:
            return np.zeros(int(self.n_samples))
        tau = self.t_ - self.nodes_
        A = tau[:, None, None] * self.a_
        inv = np.linalg.inv(A)
        v = y - self.states_  # (N, Q, d)
        grad_dir = np.einsum("qij,nqj->nqi", inv, v)
        g = gaussian_density(A[None], self.states_, y)
        integrand = np.sum(grad_dir * self.drifts_, axis=-1) * g
        return integrand @ self.node_weights_

    def estimate(self, Y) -> list:
        Y = check_points(Y, self.model.dim, "Y")
        out = []
        bs = int(self.block_size)
        for y in Y:
            lead = self.leading_term(y)
            vals = self.sample_contributions(y)
            mom = merge_all(Moments.from_array(vals[i:i + bs]) for i in range(0, vals.size, bs))
            est = DensityEstimate(
                lead + float(mom.mean), mom.stderr if not self.zero_drift_ else 0.0, int(mom.n), self.method,
                seed=self.seed_, x=self.x_.copy(), y=y.copy(), t=self.t_,
                extras={"leading": lead, "correction": float(mom.mean), "quad_nodes": int(self.quad_nodes)},
            )
            out.append(est)
        return out


def density_girsanov_kernel(model, x, y, t, bandwidth=None, N=10_000, seed=0, **kw) -> DensityEstimate:
    est = GirsanovKernelDensity(model, t=t, bandwidth=bandwidth, n_samples=N, seed=seed, **kw).fit(x)
    return est.estimate(np.atleast_1d(y)[None] if model.dim > 1 else [y])[0]


def density_first_order(model, x, y, t, quad_nodes=24, N=10_000, seed=0, **kw) -> DensityEstimate:
    est = FirstOrderDensity(model, t=t, quad_nodes=quad_nodes, n_samples=N, seed=seed, **kw).fit(x)
    return est.estimate(np.atleast_1d(y)[None] if model.dim > 1 else [y])[0]


# ----------------------------------------------------------------------------
# Holder diagnostic


def _as_value(v) -> float:
    return float(v.value) if isinstance(v, DensityEstimate) else float(v)


def holder_modulus_diagnostic(estimates: Mapping, gamma: float) -> float:
    """``max |p(y) - p(y')| / |y - y'|^gamma`` over pairs of targets."""
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    items = [(np.atleast_1d(np.asarray(k, dtype=float)), _as_value(v)) for k, v in estimates.items()]
    if len(items) < 2:
        raise DomainError("the Holder diagnostic needs at least two points")
    best = 0.0
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            dist = float(np.linalg.norm(items[i][0] - items[j][0]))
            if dist == 0:
                continue
            best = max(best, abs(items[i][1] - items[j][1]) / dist ** gamma)
    return best


@dataclass
class HolderScaling:
    quotients: dict
    scaled: dict
    ratio: float


def holder_scaling(by_time: Mapping[float, Mapping], gamma: float) -> HolderScaling:
    """Holder quotients at several times, also multiplied by ``t^{gamma/2}``.

    If the quotient scales like ``t^{-gamma/2}`` the scaled values agree;
    ``ratio`` is max/min of the scaled values.
    """
    if len(by_time) < 2:
        raise DomainError("need estimates at two or more times")
    quot = {float(t): holder_modulus_diagnostic(est, gamma) for t, est in by_time.items()}
    scaled = {t: q * t ** (gamma / 2.0) for t, q in quot.items()}
    vals = [v for v in scaled.values() if v > 0]
    ratio = max(vals) / min(vals) if vals else math.nan
    return HolderScaling(quot, scaled, ratio)
