"""Path-dependent SDE models.

A model couples a drift functional ``b(t, w)`` that may look at the whole
path prefix ``w|[0, t]`` with a diffusion field ``sigma(t, x)``. Drifts come
from a closed set of builtins, each of which declares its own growth
constants, plus ``SumDrift``/``ScaledDrift`` for composition.

Path functionals are evaluated on discrete nodes: running maxima over nodes,
running integrals by the left-endpoint rule, delayed values by flooring onto
the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ._validation import check_point, check_positive
from .exceptions import DomainError, NumericError
from .rng import DiscretePath

_TIME_TOL = 1e-12


# ----------------------------------------------------------------------------
# small helpers


def _floor_index(grid: np.ndarray, t) -> np.ndarray:
    """Index of the largest node ``<= t`` (vectorised)."""
    t = np.asarray(t, dtype=float)
    scale = np.maximum(1.0, np.abs(t))
    idx = np.searchsorted(grid, t + _TIME_TOL * scale, side="right") - 1
    return np.clip(idx, 0, grid.size - 1)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _as_vector(value, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise DomainError(f"{name} must be a scalar or a vector of length {dim}")
    return arr


def _as_matrix(value, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1 and arr.shape == (dim,):
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise DomainError(f"{name} must be a scalar, diagonal or {dim}x{dim} matrix")
    return arr


# ----------------------------------------------------------------------------
# functional specification  A_t(w) = (t, w_t, max zeta, delayed w, int c)


_ZETA = {
    "abs": (lambda t, x: _norm(x), (0.0, 1.0)),
    "zero": (lambda t, x: np.zeros(x.shape[:-1]), (0.0, 0.0)),
    "first": (lambda t, x: np.abs(x[..., 0]), (0.0, 1.0)),
}

_INTEGRAND = {
    "identity": (lambda t, x: x, (0.0, 1.0)),
    "zero": (lambda t, x: np.zeros(x.shape[:-1] + (1,)), (0.0, 0.0)),
    "one": (lambda t, x: np.ones(x.shape[:-1] + (1,)), (1.0, 0.0)),
    "abs": (lambda t, x: _norm(x)[..., None], (0.0, 1.0)),
}


@dataclass(frozen=True)
class LinearNu:
    """``nu(chi) = offset + t*a_t + A_w w + a_z z + sum_i a_i u_i + A_v v``.

    With ``cap`` set the output is squashed to ``cap * tanh(. / cap)``
    componentwise, which keeps the drift bounded by ``cap``.
    """

    dim: int = 1
    w: object = 0.0
    z: object = 0.0
    t: object = 0.0
    delay: Sequence[float] = ()
    v: object = 0.0
    offset: object = 0.0
    cap: Optional[float] = None

    def __post_init__(self):
        d = int(self.dim)
        object.__setattr__(self, "_Aw", _as_matrix(self.w, d, "nu.w"))
        object.__setattr__(self, "_az", _as_vector(self.z, d, "nu.z"))
        object.__setattr__(self, "_at", _as_vector(self.t, d, "nu.t"))
        object.__setattr__(self, "_off", _as_vector(self.offset, d, "nu.offset"))
        object.__setattr__(self, "_ai", np.asarray(self.delay, dtype=float).ravel())
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "_Av", v)
        if self.cap is not None:
            check_positive("nu.cap", self.cap)

    holder_beta = 1.0

    def __call__(self, t, w, z, delayed, v):
        w = np.asarray(w, dtype=float)
        if self.dim == 1:
            out = w * self._Aw[0, 0]
        else:
            out = w @ self._Aw.T
        if np.any(self._off != 0):
            out = out + self._off
        if np.any(self._at != 0):
            out = out + np.asarray(t, dtype=float)[..., None] * self._at
        if np.any(self._az != 0):
            out = out + np.asarray(z)[..., None] * self._az
        if delayed is not None and self._ai.size:
            k = min(self._ai.size, delayed.shape[-2])
            out = out + np.einsum("i,...id->...d", self._ai[:k], delayed[..., :k, :])
        if v is not None and np.any(self._Av != 0):
            if self._Av.ndim == 0:
                vv = v if v.shape[-1] == self.dim else np.broadcast_to(v[..., :1], v.shape[:-1] + (self.dim,))
                out = out + float(self._Av) * vv
            else:
                out = out + v @ self._Av.T
        if self.cap is not None:
            out = self.cap * np.tanh(out / self.cap)
        return out

    def growth(self, T: float, zeta_growth, c_growth) -> float:
        """Linear-growth constant of ``nu o A`` on ``[0, T]``."""
        if self.cap is not None:
            return float(self.cap)
        z0, z1 = zeta_growth
        c0, c1 = c_growth
        nz = float(np.linalg.norm(self._az))
        nv = float(np.linalg.norm(np.atleast_2d(self._Av), 2)) if np.any(self._Av != 0) else 0.0
        const = float(np.linalg.norm(self._off)) + float(np.linalg.norm(self._at)) * T + nz * z0 + nv * T * c0
        slope = float(np.linalg.norm(self._Aw, 2)) + nz * z1 + float(np.sum(np.abs(self._ai))) + nv * T * c1
        return max(const, slope)


@dataclass
class FunctionalSpec:
    """Ingredients of the composite functional and of ``b = nu o A``.

    ``weights`` are the summable ``theta_i`` attached to the stored delays;
    ``tail`` is the analytic mass of the weights beyond the stored list.
    """

    dim: int = 1
    zeta: str = "zero"
    delays: Sequence[float] = ()
    weights: Sequence[float] = ()
    tail: float = 0.0
    integrand: str = "zero"
    nu: Callable = None
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        self.dim = int(self.dim)
        self.delays = tuple(float(t) for t in self.delays)
        if any(t <= 0 for t in self.delays):
            raise DomainError("delays must be positive")
        if not self.weights:
            self.weights = tuple(1.0 for _ in self.delays)
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != len(self.delays):
            raise DomainError("delays and weights must have the same length")
        if any(w < 0 for w in self.weights) or self.tail < 0:
            raise DomainError("delay weights must be nonnegative")
        if self.zeta not in _ZETA:
            raise DomainError(f"unknown zeta {self.zeta!r}; choose from {sorted(_ZETA)}")
        if self.integrand not in _INTEGRAND:
            raise DomainError(f"unknown integrand {self.integrand!r}; choose from {sorted(_INTEGRAND)}")
        if self.nu is None:
            self.nu = LinearNu(self.dim)
        if not 0 < self.beta <= 1 or not 0 < self.gamma <= 1:
            raise DomainError("Holder exponents must lie in (0, 1]")

    @property
    def zeta_func(self):
        return _ZETA[self.zeta][0]

    @property
    def integrand_func(self):
        return _INTEGRAND[self.integrand][0]

    @property
    def ell(self) -> int:
        return self.dim if self.integrand == "identity" else 1

    def tail_mass(self, m: int) -> float:
        m = max(0, int(m))
        return float(sum(self.weights[m:])) + float(self.tail)

    def growth(self, T: float) -> float:
        nu = self.nu
        if hasattr(nu, "growth"):
            return nu.growth(T, _ZETA[self.zeta][1], _INTEGRAND[self.integrand][1])
        return math.inf


@dataclass
class FunctionalState:
    """Components of ``A_t(w)``; arrays carry leading batch/query axes."""

    t: np.ndarray
    w: np.ndarray
    running_max: np.ndarray
    delayed: np.ndarray  # (..., n_delays, d)
    integral: np.ndarray  # (..., ell)

    def as_tuple(self):
        return self.t, self.w, self.running_max, self.delayed, self.integral


def functional_values(
    spec: FunctionalSpec,
    grid,
    states,
    query_idx,
    stride: int = 1,
    m: Optional[int] = None,
    delay_from_query: bool = True,
) -> FunctionalState:
    """Evaluate the (possibly coarsened) functional at fine nodes ``query_idx``.

    ``states`` is ``(N, K, d)`` on ``grid``. With ``stride > 1`` only every
    ``stride``-th node is observed and every component is floored onto that
    coarse grid, giving the discretised functional of the path-dependent
    Euler scheme; delays beyond ``m`` are replaced by the zero vector. Delays
    are floored from the actual query time ``s - tau_i`` unless
    ``delay_from_query`` is false, in which case from the floored time.
    """
    grid = np.asarray(grid, dtype=float)
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    q = np.atleast_1d(np.asarray(query_idx, dtype=np.int64))
    stride = int(stride)
    cidx = np.arange(0, grid.size, stride)
    cgrid = grid[cidx]
    cstates = states[:, cidx, :]
    qj = q // stride
    t_q = cgrid[qj]
    w_q = cstates[:, qj, :]

    zeta = spec.zeta_func(cgrid[None, :], cstates)
    run_max = np.maximum.accumulate(zeta, axis=1)[:, qj]

    c_vals = spec.integrand_func(cgrid[None, :], cstates)
    dt = np.diff(cgrid)
    integ = np.zeros((states.shape[0], cgrid.size, c_vals.shape[-1]))
    if cgrid.size > 1:
        np.cumsum(c_vals[:, :-1, :] * dt[None, :, None], axis=1, out=integ[:, 1:, :])
    integ = integ[:, qj, :]

    n_del = len(spec.delays)
    m_eff = n_del if m is None else min(int(m), n_del)
    delayed = np.zeros((states.shape[0], q.size, n_del, states.shape[-1]))
    base_t = grid[q] if delay_from_query else t_q
    for i in range(m_eff):
        target = np.maximum(base_t - spec.delays[i], 0.0)
        j = _floor_index(cgrid, target)
        delayed[:, :, i, :] = cstates[:, j, :]
    t_b = np.broadcast_to(t_q, run_max.shape)
    return FunctionalState(t_b, w_q, run_max, delayed, integ)


def functional_state(spec: FunctionalSpec, path: DiscretePath, t: float) -> FunctionalState:
    """``A_t`` of a single path (or each path of a batch) at time ``t``."""
    if path.states.shape[-2] == 0:
        raise DomainError("empty path")
    if t < -_TIME_TOL or t > path.horizon * (1 + _TIME_TOL) + _TIME_TOL:
        raise DomainError(f"t={t!r} outside the path horizon [0, {path.horizon}]")
    k = int(_floor_index(path.grid, t))
    st = functional_values(spec, path.grid, path.batch_states(), [k])
    sq = (lambda a: a[:, 0]) if path.is_batch else (lambda a: a[0, 0])
    return FunctionalState(sq(st.t), sq(st.w), sq(st.running_max), sq(st.delayed), sq(st.integral))


# ----------------------------------------------------------------------------
# history buffer used while stepping a scheme


class PathHistory:
    """Growing batch of paths, readable by path-dependent drifts.

    ``buffer`` has shape ``(N, K, d)``; nodes ``0..k`` are filled. Drifts may
    keep incremental caches in ``cache`` keyed by their own identity.
    """

    def __init__(self, grid, x0, n_paths: int):
        self.grid = np.asarray(grid, dtype=float)
        x0 = np.asarray(x0, dtype=float)
        d = x0.shape[-1]
        self.buffer = np.empty((int(n_paths), self.grid.size, d))
        self.buffer[:, 0, :] = x0
        self.k = 0
        self.cache: dict = {}

    @classmethod
    def from_states(cls, grid, states) -> "PathHistory":
        states = np.asarray(states, dtype=float)
        if states.ndim == 2:
            states = states[None]
        hist = cls(grid, states[:, 0, :], states.shape[0])
        hist.buffer[:] = states
        return hist

    @property
    def time(self) -> float:
        return float(self.grid[self.k])

    @property
    def current(self) -> np.ndarray:
        return self.buffer[:, self.k, :]

    def push(self, x):
        self.k += 1
        self.buffer[:, self.k, :] = x

    def seek(self, k: int):
        self.k = int(k)

    def index_at(self, t: float) -> int:
        return int(_floor_index(self.grid[: self.k + 1], t))

    def running(self, key, func, combine, init):
        """Incrementally maintained running reduction over nodes ``0..k``."""
        entry = self.cache.get(key)
        if entry is None or entry[0] > self.k:
            value = init(func(self.grid[0], self.buffer[:, 0, :]))
            last = 0
        else:
            last, value = entry
        for j in range(last + 1, self.k + 1):
            value = combine(value, j)
        self.cache[key] = (self.k, value)
        return value

    def functional(self, spec: FunctionalSpec, m: Optional[int] = None) -> FunctionalState:
        """``A_{t_k}`` at the current node from the nodes filled so far."""
        grid, buf = self.grid, self.buffer
        zf, cf = spec.zeta_func, spec.integrand_func

        run_max = self.running(
            ("max", id(spec)),
            zf,
            lambda v, j: np.maximum(v, zf(grid[j], buf[:, j, :])),
            lambda v0: np.array(v0, dtype=float),
        )
        integ = self.running(
            ("int", id(spec)),
            cf,
            lambda v, j: v + cf(grid[j - 1], buf[:, j - 1, :]) * (grid[j] - grid[j - 1]),
            lambda v0: np.zeros_like(np.asarray(v0, dtype=float)),
        )
        n_del = len(spec.delays)
        m_eff = n_del if m is None else min(int(m), n_del)
        delayed = np.zeros((buf.shape[0], n_del, buf.shape[-1]))
        t = self.time
        for i in range(m_eff):
            j = self.index_at(max(t - spec.delays[i], 0.0))
            delayed[:, i, :] = buf[:, j, :]
        return FunctionalState(np.full(buf.shape[0], t), self.current, run_max, delayed, integ)


# ----------------------------------------------------------------------------
# drifts


class Drift:
    """Base drift. Markovian drifts implement ``value(t, x)``."""

    kind = "drift"
    markovian = True
    dim: Optional[int] = None

    def value(self, t, x):
        raise NotImplementedError

    def evaluate(self, hist: PathHistory) -> np.ndarray:
        return self.value(hist.time, hist.current)

    def along_path(self, grid, states, stride: int = 1, m: Optional[int] = None) -> np.ndarray:
        """Drift at every (coarse) left node: ``(N, K_c - 1, d)``."""
        states = np.asarray(states, dtype=float)
        if states.ndim == 2:
            states = states[None]
        cidx = np.arange(0, len(grid), int(stride))
        g = np.asarray(grid)[cidx[:-1]]
        x = states[:, cidx[:-1], :]
        return self.value(np.broadcast_to(g, x.shape[:-1]), x)

    # growth metadata
    def growth_constant(self, T: float) -> Optional[float]:
        return None

    @property
    def bound(self) -> Optional[float]:
        return None

    def sublinear(self, delta: float) -> Optional[float]:
        """``K(delta)`` with ``|b| <= delta * w* + K(delta)``, if known."""
        return self.bound

    def scaled(self, q: float) -> "Drift":
        return ScaledDrift(self, q)

    def __repr__(self):
        return f"{type(self).__name__}()"


class ZeroDrift(Drift):
    kind = "zero"

    def value(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def growth_constant(self, T):
        return 0.0

    @property
    def bound(self):
        return 0.0


class ConstantDrift(Drift):
    kind = "constant"

    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.dim = self.c.size

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.c, x.shape).copy()

    def growth_constant(self, T):
        return float(np.linalg.norm(self.c))

    @property
    def bound(self):
        return float(np.linalg.norm(self.c))

    def __repr__(self):
        return f"ConstantDrift(c={self.c.tolist()})"


class LinearDrift(Drift):
    """Ornstein-Uhlenbeck type drift ``b(x) = -kappa (x - mean)``."""

    kind = "ou"

    def __init__(self, kappa=1.0, mean=0.0, dim: int = 1):
        self.dim = int(dim)
        self.kappa_matrix = _as_matrix(kappa, self.dim, "kappa")
        self.mean = _as_vector(mean, self.dim, "mean")
        self.kappa = kappa

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        return -(x - self.mean) @ self.kappa_matrix.T

    def growth_constant(self, T):
        nk = float(np.linalg.norm(self.kappa_matrix, 2))
        return max(nk, nk * float(np.linalg.norm(self.mean)))

    def __repr__(self):
        return f"LinearDrift(kappa={self.kappa!r}, mean={self.mean.tolist()})"


class TanhDrift(Drift):
    """Bounded drift ``b(x) = scale * tanh(slope * x)`` componentwise."""

    kind = "tanh"

    def __init__(self, scale=0.5, slope=1.0, dim: int = 1):
        self.dim = int(dim)
        self.scale = _as_vector(scale, self.dim, "scale")
        self.slope = float(slope)

    def value(self, t, x):
        return self.scale * np.tanh(self.slope * np.asarray(x, dtype=float))

    def growth_constant(self, T):
        return self.bound

    @property
    def bound(self):
        return float(np.linalg.norm(self.scale))

    @property
    def sup_norm(self) -> float:
        """Largest componentwise bound."""
        return float(np.max(np.abs(self.scale)))

    def __repr__(self):
        return f"TanhDrift(scale={self.scale.tolist()}, slope={self.slope})"


class BangBangDrift(Drift):
    """``b_i(x) = beta_i * sgn(alpha_i - x_i)`` with ``sgn(0) = -1``."""

    kind = "bangbang"

    def __init__(self, alpha=0.0, beta=0.5, dim: int = 1):
        self.dim = int(dim)
        self.alpha = _as_vector(alpha, self.dim, "alpha")
        self.beta = _as_vector(beta, self.dim, "beta")

    def value(self, t, x):
        diff = self.alpha - np.asarray(x, dtype=float)
        return self.beta * np.where(diff > 0, 1.0, -1.0)

    def growth_constant(self, T):
        return self.bound

    @property
    def bound(self):
        return float(np.linalg.norm(self.beta))


class Heston32Drift(Drift):
    """``b(x) = lam * x * (mu - |x|)``: super-linear, no linear-growth constant."""

    kind = "heston32"

    def __init__(self, lam=1.0, mu=1.0):
        self.dim = 1
        self.lam = float(lam)
        self.mu = float(mu)

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.lam * x * (self.mu - np.abs(x))

    def sublinear(self, delta):
        return None

    def __repr__(self):
        return f"Heston32Drift(lam={self.lam}, mu={self.mu})"


class FunctionalDrift(Drift):
    """``b(t, w) = nu(A_t(w))`` for a ``FunctionalSpec``.

    ``m`` truncates the delay list (slots beyond ``m`` contribute zero).
    """

    kind = "functional"
    markovian = False

    def __init__(self, spec: FunctionalSpec, m: Optional[int] = None):
        self.spec = spec
        self.dim = spec.dim
        self.m = m

    def evaluate(self, hist):
        st = hist.functional(self.spec, self.m)
        return self.spec.nu(*st.as_tuple())

    def along_path(self, grid, states, stride=1, m=None, delay_from_query=True):
        states = np.asarray(states, dtype=float)
        if states.ndim == 2:
            states = states[None]
        m = self.m if m is None else m
        q = np.arange(0, len(grid) - 1, int(stride))
        st = functional_values(self.spec, grid, states, q, stride=stride, m=m,
                               delay_from_query=delay_from_query)
        return self.spec.nu(*st.as_tuple())

    def growth_constant(self, T):
        g = self.spec.growth(T)
        return None if not np.isfinite(g) else g

    @property
    def bound(self):
        cap = getattr(self.spec.nu, "cap", None)
        return None if cap is None else float(cap) * math.sqrt(self.dim)

    def __repr__(self):
        return f"FunctionalDrift(spec={self.spec!r}, m={self.m!r})"


def running_max_drift(coef: float = 1.0, zeta: str = "abs", dim: int = 1) -> FunctionalDrift:
    """``b = coef * max_{s<=t} zeta(w_s)`` in every coordinate."""
    spec = FunctionalSpec(dim=dim, zeta=zeta, nu=LinearNu(dim, z=coef))
    return FunctionalDrift(spec)


def delay_drift(delays, coefs, weights=None, dim: int = 1) -> FunctionalDrift:
    """``b = sum_i coef_i * w_{(t - tau_i)^+}``."""
    spec = FunctionalSpec(dim=dim, delays=delays, weights=weights or (), nu=LinearNu(dim, delay=coefs))
    return FunctionalDrift(spec)


def running_integral_drift(coef: float = 1.0, integrand: str = "identity", dim: int = 1) -> FunctionalDrift:
    """``b = coef * int_0^t c(w_s) ds``."""
    spec = FunctionalSpec(dim=dim, integrand=integrand, nu=LinearNu(dim, v=coef))
    return FunctionalDrift(spec)


class SumDrift(Drift):
    kind = "sum"

    def __init__(self, *parts: Drift):
        if not parts:
            raise DomainError("SumDrift needs at least one component")
        self.parts = parts
        self.markovian = all(p.markovian for p in parts)
        dims = {p.dim for p in parts if p.dim is not None}
        if len(dims) > 1:
            raise DomainError("components have different dimensions")
        self.dim = dims.pop() if dims else None

    def value(self, t, x):
        return sum(p.value(t, x) for p in self.parts)

    def evaluate(self, hist):
        return sum(p.evaluate(hist) for p in self.parts)

    def along_path(self, grid, states, stride=1, m=None):
        return sum(p.along_path(grid, states, stride=stride, m=m) for p in self.parts)

    def growth_constant(self, T):
        ks = [p.growth_constant(T) for p in self.parts]
        return None if any(k is None for k in ks) else float(sum(ks))

    @property
    def bound(self):
        bs = [p.bound for p in self.parts]
        return None if any(b is None for b in bs) else float(sum(bs))

    def sublinear(self, delta):
        # split delta evenly across the components
        ks = [p.sublinear(delta / len(self.parts)) for p in self.parts]
        return None if any(k is None for k in ks) else float(sum(ks))


class ScaledDrift(Drift):
    kind = "scaled"

    def __init__(self, base: Drift, q: float):
        self.base = base
        self.q = float(q)
        self.markovian = base.markovian
        self.dim = base.dim

    def value(self, t, x):
        return self.q * self.base.value(t, x)

    def evaluate(self, hist):
        return self.q * self.base.evaluate(hist)

    def along_path(self, grid, states, stride=1, m=None):
        return self.q * self.base.along_path(grid, states, stride=stride, m=m)

    def growth_constant(self, T):
        k = self.base.growth_constant(T)
        return None if k is None else abs(self.q) * k

    @property
    def bound(self):
        b = self.base.bound
        return None if b is None else abs(self.q) * b

    def sublinear(self, delta):
        if self.q == 0:
            return 0.0
        k = self.base.sublinear(delta / abs(self.q))
        return None if k is None else abs(self.q) * k


# ----------------------------------------------------------------------------
# diffusions


class Diffusion:
    """``sigma(t, x)`` returning ``(..., d, d)`` matrices."""

    kind = "diffusion"
    constant = False
    diagonal = False
    dim: int = 1

    def matrix(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def apply(self, t, x, dw) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.matrix(t, x), dw)

    def covariance(self, t, x) -> np.ndarray:
        s = self.matrix(t, x)
        return s @ np.swapaxes(s, -1, -2)

    def inverse_apply(self, t, x, v) -> np.ndarray:
        s = self.matrix(t, x)
        try:
            return np.linalg.solve(s, v[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NumericError("diffusion matrix is singular") from exc


class ConstantDiffusion(Diffusion):
    kind = "constant"
    constant = True

    def __init__(self, matrix=1.0, dim: int = 1):
        m = np.asarray(matrix, dtype=float)
        if m.ndim == 2:
            dim = m.shape[0]
        self.dim = int(dim)
        self.sigma = _as_matrix(m, self.dim, "diffusion matrix")
        self.diagonal = bool(np.all(self.sigma == np.diag(np.diag(self.sigma))))
        self._inv = None

    def matrix(self, t=None, x=None):
        if x is None:
            return self.sigma
        x = np.asarray(x)
        return np.broadcast_to(self.sigma, x.shape[:-1] + self.sigma.shape)

    def apply(self, t, x, dw):
        return np.asarray(dw) @ self.sigma.T

    def covariance(self, t=None, x=None):
        a = self.sigma @ self.sigma.T
        if x is None:
            return a
        return np.broadcast_to(a, np.asarray(x).shape[:-1] + a.shape)

    @property
    def inverse(self) -> np.ndarray:
        if self._inv is None:
            if abs(np.linalg.det(self.sigma)) < 1e-300:
                raise NumericError("constant diffusion matrix is singular", state=self.sigma)
            self._inv = np.linalg.inv(self.sigma)
        return self._inv

    def inverse_apply(self, t, x, v):
        return np.asarray(v) @ self.inverse.T

    def __repr__(self):
        return f"ConstantDiffusion({self.sigma.tolist()})"


_FIELDS = {
    # sigma(x) = c0 + c1 * x
    "affine": lambda p: (lambda x: p.get("c0", 1.0) + p.get("c1", 0.0) * x),
    # sigma(x) = xi * |x|^{3/2}
    "heston32": lambda p: (lambda x: p.get("xi", 1.0) * np.abs(x) ** 1.5),
    # sigma(x) = base + amp * sin(freq * x)
    "sine": lambda p: (lambda x: p.get("base", 1.0) + p.get("amp", 0.25) * np.sin(p.get("freq", 1.0) * x)),
}


class DiagonalDiffusion(Diffusion):
    """``sigma(x) = diag(f(x_1), ..., f(x_d))`` for a builtin scalar field."""

    kind = "builtin"
    diagonal = True

    def __init__(self, field: str = "affine", dim: int = 1, **params):
        if field not in _FIELDS:
            raise DomainError(f"unknown diffusion field {field!r}; choose from {sorted(_FIELDS)}")
        self.field = field
        self.params = {k: float(v) for k, v in params.items()}
        self.dim = int(dim)
        self._f = _FIELDS[field](self.params)

    def diag(self, t, x) -> np.ndarray:
        return np.asarray(self._f(np.asarray(x, dtype=float)), dtype=float)

    def matrix(self, t, x):
        dg = self.diag(t, x)
        out = np.zeros(dg.shape + (dg.shape[-1],))
        idx = np.arange(dg.shape[-1])
        out[..., idx, idx] = dg
        return out

    def apply(self, t, x, dw):
        return self.diag(t, x) * dw

    def covariance(self, t, x):
        dg = self.diag(t, x)
        return self.matrix(t, x) * dg[..., None, :]

    def inverse_apply(self, t, x, v):
        dg = self.diag(t, x)
        if np.any(dg == 0):
            raise NumericError("diffusion vanishes at a node", state=np.asarray(x))
        return v / dg

    def __repr__(self):
        return f"DiagonalDiffusion({self.field!r}, {self.params})"


# ----------------------------------------------------------------------------
# the model


@dataclass
class PathDependentModel:
    """Drift, diffusion and the declared growth/regularity constants.

    ``linear_growth_K`` defaults to the constant the drift declares for the
    horizon ``T``. ``sublinear_table`` maps ``delta`` to ``K(delta)``.
    """

    dim: int
    drift: Drift
    diffusion: Diffusion
    linear_growth_K: Optional[float] = None
    sublinear_table: Mapping[float, float] = field(default_factory=dict)
    drift_bound: Optional[float] = None
    ellipticity: Optional[tuple] = None
    holder: tuple = (1.0, 0.0)
    T: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.dim = int(self.dim)
        if self.dim < 1:
            raise DomainError("dim must be positive")
        if self.drift.dim not in (None, self.dim):
            raise DomainError(f"drift has dimension {self.drift.dim}, model has {self.dim}")
        if self.diffusion.dim != self.dim:
            raise DomainError(f"diffusion has dimension {self.diffusion.dim}, model has {self.dim}")
        if self.linear_growth_K is None:
            self.linear_growth_K = self.drift.growth_constant(self.T)
        if self.drift_bound is None:
            self.drift_bound = self.drift.bound
        self.sublinear_table = {float(k): float(v) for k, v in dict(self.sublinear_table).items()}
        if self.ellipticity is None and self.diffusion.constant:
            ev = np.linalg.eigvalsh(self.diffusion.covariance())
            self.ellipticity = (float(ev[0]), float(ev[-1]))
        if self.ellipticity is not None:
            lo, hi = (float(v) for v in self.ellipticity)
            if not 0 <= lo <= hi:
                raise DomainError("ellipticity must satisfy 0 <= lower <= upper")
            if self.diffusion.constant:
                ev = np.linalg.eigvalsh(self.diffusion.covariance())
                tol = 1e-9 * max(1.0, hi)
                if ev[0] < lo - tol or ev[-1] > hi + tol:
                    raise DomainError(
                        f"eigenvalues of sigma sigma^T {ev.tolist()} fall outside [{lo}, {hi}]"
                    )
            self.ellipticity = (lo, hi)
        alpha = float(self.holder[0])
        if not 0 < alpha <= 1:
            raise DomainError("Holder exponent alpha must lie in (0, 1]")

    @property
    def diffusion_constant(self) -> bool:
        return bool(self.diffusion.constant)

    @property
    def a_lower(self) -> float:
        if self.ellipticity is None:
            raise DomainError("model has no ellipticity constants")
        return self.ellipticity[0]

    def K_delta(self, delta: float) -> float:
        """Sub-linear growth constant ``K(delta)``.

        Uses the smallest tabulated ``delta' <= delta`` (a valid bound for any
        larger delta), then falls back on the drift's own declaration.
        """
        delta = check_positive("delta", delta)
        cands = [k for d, k in self.sublinear_table.items() if d <= delta + 1e-15]
        own = self.drift.sublinear(delta)
        if own is not None:
            cands.append(own)
        if not cands:
            raise DomainError(f"no sub-linear growth constant available for delta={delta}")
        return float(min(cands))

    def with_drift(self, drift: Drift, **changes) -> "PathDependentModel":
        kwargs = dict(
            dim=self.dim, drift=drift, diffusion=self.diffusion, ellipticity=self.ellipticity,
            holder=self.holder, T=self.T, name=self.name,
        )
        kwargs.update(changes)
        return PathDependentModel(**kwargs)


def eval_drift(model: PathDependentModel, t: float, path: DiscretePath) -> np.ndarray:
    """``b(t, path)`` from the nodes of ``path`` up to ``t``.

    Returns ``(d,)`` for a single path and ``(N, d)`` for a batch.
    """
    if not np.all(np.isfinite(path.states)):
        raise NumericError("path contains non-finite values")
    if t < -_TIME_TOL or t > path.horizon + _TIME_TOL * max(1.0, path.horizon):
        raise DomainError(f"t={t!r} outside the path horizon [0, {path.horizon}]")
    k = int(_floor_index(path.grid, t))
    states = path.batch_states()
    hist = PathHistory.from_states(path.grid[: k + 1], states[:, : k + 1, :])
    hist.seek(k)
    out = np.asarray(model.drift.evaluate(hist), dtype=float)
    return out if path.is_batch else out[0]


@dataclass
class GrowthReport:
    max_ratio: float
    declared_K: Optional[float]
    sublinear: dict
    violations: list
    n_evaluations: int

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_growth(model: PathDependentModel, sample_paths, rtol: float = 1e-9) -> GrowthReport:
    """Spot-check the declared linear and sub-linear growth constants.

    For every node of every path, ``|b(t, w)|`` is compared with
    ``1 + w*_t`` (``w*`` the running max of ``|w|``) and, per tabulated
    delta, ``|b| - delta * w*_t`` with ``K(delta)``.
    """
    paths = list(sample_paths)
    if not paths:
        raise DomainError("validate_growth needs at least one path")
    ratios, excess = [], {d: [] for d in model.sublinear_table}
    n_eval = 0
    for path in paths:
        states = path.batch_states()
        b = np.asarray(model.drift.along_path(path.grid, states), dtype=float)
        hist = PathHistory.from_states(path.grid, states)
        hist.seek(path.grid.size - 1)
        b_last = np.asarray(model.drift.evaluate(hist), dtype=float)[:, None, :]
        b = np.concatenate([b, b_last], axis=1)
        bn = _norm(b)
        wstar = np.maximum.accumulate(_norm(states), axis=1)
        ratios.append(float(np.max(bn / (1.0 + wstar))))
        for d in excess:
            excess[d].append(float(np.max(bn - d * wstar)))
        n_eval += bn.size
    max_ratio = max(ratios)
    violations = []
    K = model.linear_growth_K
    if K is None:
        violations.append(f"no linear-growth constant declared (max observed ratio {max_ratio:.6g})")
    elif max_ratio > K * (1 + rtol) + rtol:
        violations.append(f"ratio {max_ratio:.6g} exceeds declared K={K:.6g}")
    sub = {}
    for d, vals in excess.items():
        sub[d] = max(vals)
        if sub[d] > model.sublinear_table[d] * (1 + rtol) + rtol:
            violations.append(f"|b| - {d}*w* = {sub[d]:.6g} exceeds K({d})={model.sublinear_table[d]:.6g}")
    return GrowthReport(max_ratio, K, sub, violations, n_eval)


# ----------------------------------------------------------------------------
# construction from configuration dictionaries


def _functional_from_dict(d: dict, dim: int) -> FunctionalSpec:
    nu_cfg = dict(d.get("nu", {}))
    kind = nu_cfg.pop("kind", "linear")
    if kind != "linear":
        raise DomainError(f"unknown nu kind {kind!r}")
    nu = LinearNu(dim=dim, **nu_cfg)
    return FunctionalSpec(
        dim=dim,
        zeta=d.get("zeta", "zero"),
        delays=d.get("delays", ()),
        weights=d.get("weights", ()),
        tail=float(d.get("tail", 0.0)),
        integrand=d.get("integrand", "zero"),
        nu=nu,
        beta=float(d.get("beta", 1.0)),
        gamma=float(d.get("gamma", 1.0)),
    )


def make_drift(kind: str, params: dict, dim: int, functional: Optional[dict] = None) -> Drift:
    p = dict(params or {})
    if kind == "zero":
        return ZeroDrift()
    if kind == "constant":
        return ConstantDrift(_as_vector(p.get("c", 0.0), dim, "c"))
    if kind in ("ou", "linear"):
        return LinearDrift(p.get("kappa", 1.0), p.get("mean", 0.0), dim=dim)
    if kind == "tanh":
        return TanhDrift(p.get("scale", 0.5), p.get("slope", 1.0), dim=dim)
    if kind == "bangbang":
        return BangBangDrift(p.get("alpha", 0.0), p.get("beta", 0.5), dim=dim)
    if kind == "heston32":
        if dim != 1:
            raise DomainError("heston32 drift is one-dimensional")
        return Heston32Drift(p.get("lam", 1.0), p.get("mu", 1.0))
    if kind == "running_max":
        return running_max_drift(p.get("coef", 1.0), p.get("zeta", "abs"), dim=dim)
    if kind == "delay":
        return delay_drift(p.get("delays", ()), p.get("coefs", ()), p.get("weights"), dim=dim)
    if kind == "running_integral":
        return running_integral_drift(p.get("coef", 1.0), p.get("integrand", "identity"), dim=dim)
    if kind == "functional":
        cfg = functional if functional is not None else p
        return FunctionalDrift(_functional_from_dict(cfg, dim), m=p.get("m"))
    if kind == "sum":
        parts = p.get("parts", [])
        return SumDrift(*[make_drift(q.get("kind", "zero"), q.get("params", {}), dim, functional) for q in parts])
    raise DomainError(f"unknown drift kind {kind!r}")


def make_diffusion(cfg: dict, dim: int) -> Diffusion:
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return ConstantDiffusion(cfg.get("matrix", 1.0), dim=dim)
    if kind == "builtin":
        params = dict(cfg.get("params", {}))
        fld = params.pop("field", cfg.get("field", "affine"))
        return DiagonalDiffusion(fld, dim=dim, **params)
    raise DomainError(f"unknown diffusion kind {kind!r}")


def model_from_dict(cfg: dict) -> PathDependentModel:
    """Build a model from the parsed model-file mapping."""
    dim = int(cfg.get("dim", 1))
    drift_cfg = cfg.get("drift", {"kind": "zero"})
    drift = make_drift(drift_cfg.get("kind", "zero"), drift_cfg.get("params", {}), dim, cfg.get("functional"))
    diffusion = make_diffusion(cfg.get("diffusion", {}), dim)
    growth = cfg.get("growth", {})
    table = {float(e["delta"]): float(e["K_delta"]) for e in growth.get("sublinear", [])}
    ell = cfg.get("ellipticity")
    ellipticity = None if ell is None else (float(ell["lower"]), float(ell["upper"]))
    hol = cfg.get("holder", {})
    return PathDependentModel(
        dim=dim,
        drift=drift,
        diffusion=diffusion,
        linear_growth_K=growth.get("K"),
        sublinear_table=table,
        drift_bound=growth.get("bound"),
        ellipticity=ellipticity,
        holder=(float(hol.get("alpha", 1.0)), float(hol.get("norm", 0.0))),
        T=float(cfg.get("T", 1.0)),
        name=str(cfg.get("name", drift_cfg.get("kind", ""))),
    )


def simple_model(drift: Drift, sigma=1.0, dim: int = 1, **kwargs) -> PathDependentModel:
    """Model with constant diffusion ``sigma`` (scalar, diagonal or matrix)."""
    diff = sigma if isinstance(sigma, Diffusion) else ConstantDiffusion(sigma, dim=dim)
    return PathDependentModel(dim=dim, drift=drift, diffusion=diff, **kwargs)


def start_point(x, model: PathDependentModel) -> np.ndarray:
    return check_point(x, model.dim, "x")
