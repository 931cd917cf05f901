"""Gaussian kernels, Hermite weights and the unbiased parametrix estimator.

The estimator runs a frozen Euler chain *backwards from the target point*
``y``: jump times come from a renewal process with inter-arrival density
``zeta``; at each jump the chain moves by ``sigma(X_j) (W_{tau_{j+1}} -
W_{tau_j})`` and picks up the weight ``theta / zeta``. After the last jump
the frozen Gaussian from ``x`` closes the chain, divided by the survival
probability of the renewal process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator

from ._validation import check_point, check_points, check_positive, check_spd
from .exceptions import DomainError, NumericError, UnsupportedMethodError
from .model import PathDependentModel
from .rng import DEFAULT_BLOCK_SIZE, as_seed, normals, run_blocks
from .stats import DensityEstimate, Moments, merge_all

_LOG_2PI = math.log(2.0 * math.pi)
_MAX_ROUNDS = 100_000


# ----------------------------------------------------------------------------
# Gaussian kernel and Hermite polynomials


def _inv_logdet(A):
    """Inverse and log-determinant of SPD matrices (stacked on leading axes)."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] == 1:
        a = A[..., 0, 0]
        if np.any(~(a > 0)):
            raise DomainError("covariance is not positive definite")
        return (1.0 / a)[..., None, None], np.log(a)
    L = check_spd(A)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return np.linalg.inv(A), logdet


def gaussian_density(A, x, y):
    """``g_A(x, y) = exp(-<A^{-1}(y-x), y-x>/2) / ((2 pi)^{d/2} sqrt(det A))``.

    ``A`` may be a scalar (``d = 1``), a matrix or a stack of matrices
    broadcasting against the leading axes of ``x`` and ``y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if x.ndim == 0:
        x = x.reshape(1)
    if y.ndim == 0:
        y = y.reshape(1)
    d = A.shape[-1]
    inv, logdet = _inv_logdet(A)
    v = y - x
    quad = np.einsum("...i,...ij,...j->...", v, inv, v)
    return np.exp(-0.5 * quad - 0.5 * d * _LOG_2PI - 0.5 * logdet)


def hermite_first(A, v):
    """``H_A^i(v) = -(A^{-1} v)^i``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    inv, _ = _inv_logdet(A)
    return -np.einsum("...ij,...j->...i", inv, np.atleast_1d(np.asarray(v, dtype=float)))


def hermite_second(A, v):
    """``H_A^{ij}(v) = (A^{-1} v)^i (A^{-1} v)^j - (A^{-1})_{ij}``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    inv, _ = _inv_logdet(A)
    u = np.einsum("...ij,...j->...i", inv, np.atleast_1d(np.asarray(v, dtype=float)))
    return u[..., :, None] * u[..., None, :] - inv


def theta_weight(b_at_x, a_at_x, a_at_y, t, x, y):
    """Parametrix weight with coefficients frozen at ``y``.

    ``-sum_i b_i(x) H^i(y - x) + sum_ij (a(x) - a(y))_ij / 2 H^ij(y - x)``
    with Hermite polynomials of covariance ``t a(y)``. Broadcasts over
    leading batch axes.
    """
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("elapsed time must be positive")
    a_y = np.atleast_2d(np.asarray(a_at_y, dtype=float))
    a_x = np.atleast_2d(np.asarray(a_at_x, dtype=float))
    A = t[..., None, None] * a_y
    inv, _ = _inv_logdet(A)
    v = np.atleast_1d(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))
    u = np.einsum("...ij,...j->...i", inv, v)
    first = np.sum(np.asarray(b_at_x, dtype=float) * u, axis=-1)  # -b . H1 = b . A^{-1} v
    h2 = u[..., :, None] * u[..., None, :] - inv
    second = 0.5 * np.sum((a_x - a_y) * h2, axis=(-2, -1))
    return first + second


# ----------------------------------------------------------------------------
# counting process


@dataclass(frozen=True)
class CountingSpec:
    """Inter-arrival law ``zeta`` of the renewal process.

    ``exponential``: ``zeta(s) = lam exp(-lam s)``.
    ``beta``: ``zeta(s) = A s^{-beta}`` on ``(0, 2T]`` with
    ``A = (1 - beta) / (2T)^{1 - beta}``.
    """

    kind: str = "exponential"
    lam: float = 1.0
    beta: float = 0.5
    T: float = 1.0

    def __post_init__(self):
        if self.kind == "exponential":
            check_positive("lambda", self.lam)
        elif self.kind == "beta":
            if not 0 < self.beta < 1:
                raise DomainError("beta must lie in (0, 1)")
            check_positive("T", self.T)
        else:
            raise DomainError(f"unknown counting kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str, T: float = 1.0) -> "CountingSpec":
        """``exp:LAMBDA`` or ``beta:BETA``."""
        try:
            kind, val = text.split(":", 1)
            val = float(val)
        except ValueError as exc:
            raise DomainError(f"counting spec must look like exp:1.0 or beta:0.5, got {text!r}") from exc
        if kind in ("exp", "exponential"):
            return cls("exponential", lam=val)
        if kind == "beta":
            return cls("beta", beta=val, T=T)
        raise DomainError(f"unknown counting kind {kind!r}")

    @property
    def label(self) -> str:
        return f"exp:{self.lam:g}" if self.kind == "exponential" else f"beta:{self.beta:g}"

    @property
    def normalizer(self) -> float:
        return (1.0 - self.beta) / (2.0 * self.T) ** (1.0 - self.beta)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.where(s >= 0, self.lam * np.exp(-self.lam * s), 0.0)
        inside = (s > 0) & (s <= 2.0 * self.T)
        with np.errstate(divide="ignore"):
            return np.where(inside, self.normalizer * np.where(inside, s, 1.0) ** (-self.beta), 0.0)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.where(s > 0, -np.expm1(-self.lam * np.maximum(s, 0.0)), 0.0)
        return np.clip(np.maximum(s, 0.0) / (2.0 * self.T), 0.0, 1.0) ** (1.0 - self.beta)

    def survival(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.exp(-self.lam * np.maximum(s, 0.0))
        return 1.0 - self.cdf(s)

    def sample(self, rng, size):
        """Inverse-CDF draws from ``zeta``."""
        u = rng.random(size)
        if self.kind == "exponential":
            return -np.log1p(-u) / self.lam
        np.maximum(u, 2.0 ** -60, out=u)
        return 2.0 * self.T * u ** (1.0 / (1.0 - self.beta))

    def check_horizon(self, t):
        if self.kind == "beta" and t > 2.0 * self.T:
            raise DomainError(f"beta counting law needs t <= 2T = {2 * self.T}, got t={t}")


def sample_counting(spec: CountingSpec, t: float, seed):
    """Jump times in ``(0, t]``, their count and ``1 - F(t - tau_last)``."""
    t = check_positive("t", t)
    spec.check_horizon(t)
    rng = as_seed(seed).generator()
    times = []
    tau = 0.0
    while True:
        s = float(spec.sample(rng, 1)[0])
        if tau + s > t:
            break
        tau += s
        times.append(tau)
        if len(times) > _MAX_ROUNDS:
            raise NumericError("counting process produced too many jumps")
    surv = float(spec.survival(t - tau))
    return np.array(times), len(times), surv


# ----------------------------------------------------------------------------
# frozen chain


def _sigma_matrix(sigma_field, x):
    if hasattr(sigma_field, "matrix"):
        return sigma_field.matrix(None, x)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.atleast_2d(np.asarray(sigma_field(x), dtype=float))


def frozen_chain(sigma_field, y, jump_times, seed=None, increments=None) -> np.ndarray:
    """States ``X_0 = y, X_j = X_{j-1} + sigma(X_{j-1}) (W_{tau_j} - W_{tau_{j-1}})``.

    ``sigma_field`` is a ``Diffusion`` or a callable ``x -> matrix``.
    Increments are drawn from ``seed`` unless given explicitly.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tau = np.asarray(jump_times, dtype=float)
    if tau.size and np.any(np.diff(np.concatenate([[0.0], tau])) <= 0):
        raise DomainError("jump times must be positive and strictly increasing")
    d = y.size
    if increments is None:
        rng = as_seed(seed).generator()
        dt = np.diff(np.concatenate([[0.0], tau]))
        increments = normals(rng, (tau.size, d)) * np.sqrt(dt)[:, None]
    increments = np.asarray(increments, dtype=float).reshape(tau.size, d)
    states = [y]
    x = y
    for dw in increments:
        x = x + _sigma_matrix(sigma_field, x) @ dw
        states.append(x)
    return np.array(states)


@dataclass
class ParametrixChain:
    jump_times: np.ndarray
    states: np.ndarray
    gamma: float
    survival: float

    def __post_init__(self):
        if len(self.states) != len(self.jump_times) + 1:
            raise DomainError("a chain has one more state than jumps")
        if not 0 < self.survival <= 1:
            raise DomainError("survival must lie in (0, 1]")


# ----------------------------------------------------------------------------
# the estimator


def _coefficients(model: PathDependentModel):
    if not model.drift.markovian:
        raise UnsupportedMethodError("the parametrix estimator needs a Markovian drift")
    drift, diff = model.drift, model.diffusion
    return drift, diff


def _chain_block(model, x, y, t, spec, rng_count, rng_gauss, n, null_term="exact"):
    """Samples of the unbiased estimator for ``n`` chains started at ``y``.

    ``y`` is one point ``(d,)`` shared by every chain or one point per chain
    ``(n, d)``. Each round draws one inter-arrival per live chain from
    ``rng_count`` and one Gaussian vector per jumping chain from
    ``rng_gauss``. Returns ``(samples, jumps)``.
    """
    drift, diff = _coefficients(model)
    d = model.dim
    y = np.asarray(y, dtype=float)
    X = np.broadcast_to(y, (n, d)).copy()
    tau = np.zeros(n)
    weight = np.ones(n)
    jumps = np.zeros(n, dtype=np.int64)
    out = np.zeros(n)
    active = np.arange(n)
    g0 = gaussian_density(t * diff.covariance(t, X), x, X)
    rounds = 0
    while active.size:
        rounds += 1
        if rounds > _MAX_ROUNDS:
            raise NumericError("counting process produced too many jumps")
        s = spec.sample(rng_count, active.size)
        jumped = tau[active] + s <= t
        stop = active[~jumped]
        if stop.size:
            rem = t - tau[stop]
            surv = spec.survival(rem)
            first = jumps[stop] == 0
            later = stop[~first]
            if later.size:
                Xl = X[later]
                a_l = diff.covariance(t - tau[later], Xl)
                g = gaussian_density(rem[~first][:, None, None] * a_l, x, Xl)
                out[later] = weight[later] * g / surv[~first]
            zero = stop[first]
            out[zero] = g0[zero] if null_term == "exact" else g0[zero] / surv[first]
        go = active[jumped]
        if go.size:
            ds = s[jumped]
            Xo = X[go]
            dw = normals(rng_gauss, (go.size, d)) * np.sqrt(ds)[:, None]
            Xn = Xo + diff.apply(None, Xo, dw)
            if not np.all(np.isfinite(Xn)):
                raise NumericError("frozen chain produced non-finite states", state=Xo[0])
            t_new = t - (tau[go] + ds)
            try:
                th = theta_weight(
                    drift.value(t_new, Xn), diff.covariance(t_new, Xn), diff.covariance(t_new, Xo), ds, Xn, Xo
                )
            except DomainError as exc:
                raise NumericError(f"non-SPD diffusion on a sampled state: {exc}", state=Xo) from exc
            weight[go] *= th / spec.pdf(ds)
            X[go] = Xn
            tau[go] += ds
            jumps[go] += 1
        active = go
    if null_term == "exact":
        # the zero-jump event is integrated exactly; jumping chains add corrections
        out[jumps > 0] += g0[jumps > 0]
    return out, jumps


def unbiased_density_sample(
    model: PathDependentModel, x, y, t, spec: CountingSpec, seed, null_term: str = "sampled"
):
    """One signed sample of the unbiased estimator, with its chain.

    ``null_term="sampled"`` is the literal representation, in which the
    zero-jump event carries ``g / (1 - F(t))``; ``"exact"`` replaces that
    event by its expectation. Streams ``(0,)`` and ``(1,)`` of ``seed`` feed
    the counting process and the Gaussian increments.
    """
    x = check_point(x, model.dim, "x")
    y = check_point(y, model.dim, "y")
    t = check_positive("t", t)
    spec.check_horizon(t)
    drift, diff = _coefficients(model)
    seed = as_seed(seed)
    rc, rg = seed.generator(0), seed.generator(1)
    times, states = [], [y]
    gamma = 1.0
    tau = 0.0
    while True:
        s = float(spec.sample(rc, 1)[0])
        if tau + s > t:
            break
        if len(times) >= _MAX_ROUNDS:
            raise NumericError("counting process produced too many jumps")
        xo = states[-1]
        dw = normals(rg, (1, model.dim))[0] * math.sqrt(s)
        xn = xo + diff.apply(None, xo[None], dw[None])[0]
        tn = t - (tau + s)
        th = theta_weight(
            drift.value(tn, xn[None])[0], diff.covariance(tn, xn[None])[0], diff.covariance(tn, xo[None])[0],
            s, xn, xo,
        )
        gamma *= float(th) / float(spec.pdf(s))
        tau += s
        times.append(tau)
        states.append(xn)
    surv = float(spec.survival(t - tau))
    last = states[-1]
    g = float(gaussian_density((t - tau) * diff.covariance(tau, last[None])[0], x, last))
    if not times:
        g0 = g
        value = g0 if null_term == "exact" else g0 / surv
    else:
        g0 = float(gaussian_density(t * diff.covariance(t, y[None])[0], x, y))
        value = gamma * g / surv + (g0 if null_term == "exact" else 0.0)
    return value, ParametrixChain(np.array(times), np.array(states), gamma, surv)


def _diagnostics(samples: np.ndarray, mom: Moments, jumps_mean: float) -> dict:
    mean = mom.mean
    frac = float(np.mean(np.abs(samples) > 10.0 * abs(mean))) if samples.size else math.nan
    kurt = mom.kurtosis
    return {
        "mean_jumps": jumps_mean,
        "kurtosis": math.nan if kurt is None else float(kurt),
        "frac_large": frac,
    }


class UnbiasedDensity(BaseEstimator):
    """Unbiased parametrix estimator of ``y -> p_t(x, y)``.

    ``fit(x)`` fixes the start point; ``predict(Y)`` runs ``n_samples`` chains
    per target with common random numbers across targets. Block ``b`` uses
    stream ``(b, 0)`` for the counting process and ``(b, 1)`` for the
    Gaussian increments.
    """

    def __init__(
        self,
        model=None,
        t=1.0,
        counting="exp:1.0",
        n_samples=10_000,
        seed=0,
        workers=1,
        block_size=DEFAULT_BLOCK_SIZE,
        null_term="exact",
    ):
        self.model = model
        self.t = t
        self.counting = counting
        self.n_samples = n_samples
        self.seed = seed
        self.workers = workers
        self.block_size = block_size
        self.null_term = null_term

    def _spec(self) -> CountingSpec:
        if isinstance(self.counting, CountingSpec):
            return self.counting
        return CountingSpec.parse(self.counting, T=max(float(self.t), self.model.T))

    def fit(self, X, y=None):
        if self.model is None:
            raise DomainError("UnbiasedDensity needs a model")
        if self.null_term not in ("exact", "sampled"):
            raise DomainError("null_term must be 'exact' or 'sampled'")
        _coefficients(self.model)
        self.x_ = check_point(np.ravel(X), self.model.dim, "x")
        self.t_ = check_positive("t", self.t)
        self.spec_ = self._spec()
        self.spec_.check_horizon(self.t_)
        self.seed_ = as_seed(self.seed)
        return self

    def _samples(self, y):
        model, x, t, spec = self.model, self.x_, self.t_, self.spec_
        seed = self.seed_

        def task(b, n, _rng):
            vals, jumps = _chain_block(
                model, x, y, t, spec, seed.generator(b, 0), seed.generator(b, 1), n, self.null_term
            )
            return vals, jumps

        parts = run_blocks(task, self.n_samples, seed, workers=self.workers, block_size=self.block_size)
        return parts

    def estimate(self, Y) -> list:
        Y = check_points(Y, self.model.dim, "Y")
        out = []
        for y in Y:
            parts = self._samples(y)
            mom = merge_all(Moments.from_array(v) for v, _ in parts)
            samples = np.concatenate([v for v, _ in parts])
            jumps = np.concatenate([j for _, j in parts])
            extras = _diagnostics(samples, mom, float(np.mean(jumps)))
            extras["counting"] = self.spec_.label
            out.append(
                DensityEstimate.from_moments(
                    mom, "unbiased", seed=self.seed_, x=self.x_.copy(), y=y.copy(), t=self.t_, extras=extras
                )
            )
        return out

    def predict(self, Y) -> np.ndarray:
        return np.array([e.value for e in self.estimate(Y)])

    def sample_values(self, y) -> np.ndarray:
        """All per-chain samples for one target, in block order."""
        y = check_point(y, self.model.dim, "y")
        return np.concatenate([v for v, _ in self._samples(y)])


def unbiased_expectation(
    model: PathDependentModel,
    f: Callable,
    g_importance,
    x,
    t: float,
    spec: CountingSpec,
    N: int,
    seed=0,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
):
    """Estimate ``E[f(X_t)]`` as the mean of ``f(Z)/g(Z) * p_hat(x, Z)``.

    ``g_importance`` must expose ``pdf`` and ``rvs(size=, random_state=)``
    (any frozen scipy distribution qualifies; for ``d > 1`` the draws must
    have shape ``(n, d)``). ``Z`` comes from stream ``(b, 2)``.
    Returns ``(mean, stderr, n)``.
    """
    x = check_point(x, model.dim, "x")
    t = check_positive("t", t)
    spec.check_horizon(t)
    seed = as_seed(seed)
    d = model.dim

    def task(b, n, _rng):
        z = np.asarray(g_importance.rvs(size=n, random_state=seed.generator(b, 2)), dtype=float).reshape(n, d)
        gz = np.asarray(g_importance.pdf(z if d > 1 else z[:, 0]), dtype=float).reshape(n)
        fz = np.asarray(f(z if d > 1 else z[:, 0]), dtype=float).reshape(n)
        if np.any((gz <= 0) & (fz != 0)):
            raise NumericError("importance density vanishes where f does not")
        vals, _ = _chain_block(model, x, z, t, spec, seed.generator(b, 0), seed.generator(b, 1), n, "exact")
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(fz != 0, fz / gz * vals, 0.0)
        return Moments.from_array(vals)

    mom = merge_all(run_blocks(task, N, seed, workers=workers, block_size=block_size))
    return mom.mean, mom.stderr, mom.n


# ----------------------------------------------------------------------------
# analytic bounds


def parametrix_term_bound(n: int, b_sup: float, C_hat_plus: float, d: int, elapsed: float) -> float:
    """Coefficient of ``g_{c(t-s)}`` bounding the ``n``-fold convolution of ``|H|``.

    ``(sqrt(d) |b|_inf C)^n (t-s)^{(n-2)/2} Gamma(1/2)^n / Gamma(n/2)``.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    n = int(n)
    elapsed = check_positive("elapsed", elapsed)
    base = math.sqrt(d) * float(b_sup) * float(C_hat_plus)
    if base == 0:
        return 0.0
    log_val = n * math.log(base) + 0.5 * (n - 2) * math.log(elapsed) + n * 0.5 * math.log(math.pi) - gammaln(n / 2.0)
    return math.exp(log_val)


def beta_convolution(m: int, a: float, b: float, t0: float) -> float:
    """Closed form of the ``m``-fold iterated integral of ``t_m^b prod (t_j - t_{j+1})^{-a}``."""
    if int(m) != m or m < 1:
        raise DomainError("m must be a positive integer")
    if not b > -1:
        raise DomainError("b must exceed -1")
    if not 0 <= a < 1:
        raise DomainError("a must lie in [0, 1)")
    t0 = check_positive("t0", t0)
    m = int(m)
    e = b + m * (1.0 - a)
    log_val = e * math.log(t0) + m * gammaln(1.0 - a) + gammaln(1.0 + b) - gammaln(1.0 + e)
    return math.exp(log_val)
