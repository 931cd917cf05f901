"""Reporting, the smoothed characteristic-function diagnostic and the self-test suite."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._validation import check_point, check_positive
from .exceptions import UnsupportedMethodError
from .rng import DEFAULT_BLOCK_SIZE, SeedSpec, as_seed
from .schemes import simulate_terminal
from .stats import aggregate

__all__ = [
    "ARTIFACT_VERSION",
    "ExperimentReport",
    "CFResult",
    "cf_decay_diagnostic",
    "f_delta",
    "format_real",
    "rows_to_csv",
    "aggregate",
    "selftest",
]


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        return "0.1.0"


ARTIFACT_VERSION = _version()


# ----------------------------------------------------------------------------
# CSV / JSON


def format_real(v) -> str:
    """Reals with 17 significant digits; ``None`` becomes the empty field."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(format_real(u) for u in np.ravel(v).tolist())
    return str(v)


def rows_to_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_real(r.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(u) for u in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(u) for u in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(u) for k, u in v.items()}
    return v


@dataclass
class ExperimentReport:
    command: str
    config_digest: str
    rows: list
    wall_ms: Optional[int]
    seed: SeedSpec
    artifact_version: str = ARTIFACT_VERSION
    columns: list = field(default_factory=list)

    def __post_init__(self):
        self.seed = as_seed(self.seed)
        if not self.columns and self.rows:
            self.columns = list(self.rows[0])

    def to_csv(self) -> str:
        return rows_to_csv(self.columns, self.rows)

    def to_json(self) -> str:
        body = {
            "command": self.command,
            "config_digest": self.config_digest,
            "rows": _jsonable(self.rows),
            "wall_ms": self.wall_ms,
            "seed": asdict(self.seed),
            "artifact_version": self.artifact_version,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------------------------
# smoothed characteristic function


def f_delta(r, delta: float):
    """Clipped ramp ``min(1, max(0, r - delta))``: 1-Lipschitz, zero on ``[0, delta]``."""
    return np.clip(np.asarray(r, dtype=float) - delta, 0.0, 1.0)


@dataclass
class CFResult:
    xi: np.ndarray
    modulus: np.ndarray
    stderr: np.ndarray
    l2_integral: float
    decay_exponent: float
    n_samples: int

    def rows(self):
        return [
            {"xi": float(x), "modulus": float(m), "stderr": float(s)}
            for x, m, s in zip(self.xi, self.modulus, self.stderr)
        ]


def _sigma_abs(model, t, x):
    diff = model.diffusion
    if hasattr(diff, "diag"):
        return np.abs(diff.diag(t, x))[..., 0]
    return np.abs(diff.matrix(t, x)[..., 0, 0])


def cf_decay_diagnostic(
    model,
    x,
    t: float,
    delta: float,
    xi_grid,
    N: int,
    n_fine: int = 1024,
    seed=0,
    tamed_ell: Optional[float] = None,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> CFResult:
    """``|E[exp(i xi X_t) f_delta(|sigma(X_t)|)]|`` on a grid of ``xi``.

    ``X_t`` comes from Euler with ``n_fine`` steps (tamed when ``tamed_ell``
    is set). The SE is the delta-method SE of the modulus. Also reports the
    trapezoid integral of the squared modulus over the grid and minus the
    log-log slope of the modulus over the upper half of ``|xi|``.
    """
    if model.dim != 1:
        raise UnsupportedMethodError("the Fourier diagnostic is one-dimensional")
    t = check_positive("t", t)
    delta = check_positive("delta", delta, strict=False)
    x = check_point(x, 1, "x")
    xi = np.asarray(xi_grid, dtype=float).ravel()
    X = simulate_terminal(model, x, t, N, n_fine, seed=seed, workers=workers, block_size=block_size,
                          tamed_ell=tamed_ell)[:, 0]
    f = f_delta(_sigma_abs(model, t, X[:, None]), delta)
    phase = np.outer(xi, X)
    re = np.cos(phase) * f
    im = np.sin(phase) * f
    mre, mim = re.mean(axis=1), im.mean(axis=1)
    mod = np.hypot(mre, mim)
    ang = np.arctan2(mim, mre)
    proj = re * np.cos(ang)[:, None] + im * np.sin(ang)[:, None]
    se = proj.std(axis=1, ddof=1) / math.sqrt(N) if N > 1 else np.zeros_like(mod)
    order = np.argsort(xi)
    l2 = float(np.trapezoid(mod[order] ** 2, xi[order])) if xi.size > 1 else math.nan
    ax = np.abs(xi)
    sel = (ax >= np.median(ax)) & (ax > 0) & (mod > 0)
    if np.count_nonzero(sel) >= 2 and np.ptp(np.log(ax[sel])) > 0:
        decay = float(-np.polyfit(np.log(ax[sel]), np.log(mod[sel]), 1)[0])
    else:
        decay = math.nan
    return CFResult(xi, mod, se, l2, decay, int(N))


# ----------------------------------------------------------------------------
# self-test: the exact (trivial) examples of every module


def _selftest_cases():
    from .closedforms import bangbang_peak_density, ou_density
    from .girsanov import girsanov_weight, martingale_check, novikov_partition, t_threshold, z_moment_bound
    from .model import (
        ConstantDrift, FunctionalSpec, LinearNu, ZeroDrift, eval_drift, functional_state,
        running_max_drift, simple_model,
    )
    from .parametrix import UnbiasedDensity, gaussian_density
    from .rng import DiscretePath, brownian_path, uniform_grid
    from .schemes import tame_drift

    path = DiscretePath([0.0, 0.5, 1.0], [[0.0], [1.0], [0.5]])
    zero = simple_model(ZeroDrift())

    def running_max():
        return float(eval_drift(simple_model(running_max_drift()), 1.0, path)[0]) == 1.0

    def constant():
        return float(eval_drift(simple_model(ConstantDrift(0.7)), 0.3, path)[0]) == 0.7

    def delayed():
        spec = FunctionalSpec(delays=(0.5,))
        return float(functional_state(spec, path, 1.0).delayed[0, 0]) == 1.0

    def integral():
        spec = FunctionalSpec(integrand="one", nu=LinearNu(1))
        p = DiscretePath(uniform_grid(1.0, 4), np.zeros(5))
        return float(functional_state(spec, p, 1.0).integral[0]) == 1.0

    def weight_zero():
        bp = brownian_path(1, uniform_grid(1.0, 16), 3)
        return girsanov_weight(zero, bp) == 1.0 and girsanov_weight(simple_model(ConstantDrift(0.5)), bp, q=0.0) == 1.0

    def martingale_zero():
        m, se, ok = martingale_check(zero, 1.0, 64, seed=1, n_steps=8)
        return m == 1.0 and se == 0.0 and ok

    def partition():
        return np.allclose(novikov_partition(1, 1, 1, 1, 1), [0, 0.5, 1]) and len(novikov_partition(1, 1, 1e-3, 1, 1)) == 2

    def threshold():
        return t_threshold(0.5, 1, 1, 1, 3.0) == 3.0 and z_moment_bound(0.25, 1, [0.0], 1, 1, 1, 1, 1) == 1.0

    def null_unbiased():
        est = UnbiasedDensity(zero, t=1.0, n_samples=256, seed=1).fit([0.0])
        vals = est.sample_values([0.3])
        return bool(np.all(vals == vals[0])) and abs(vals[0] - gaussian_density(1.0, 0.0, 0.3)) < 1e-15

    def bangbang():
        return abs(bangbang_peak_density([0.0], [0.0], [0.0], 1.0, verbatim=True) - 2 / math.sqrt(2 * math.pi)) < 1e-15

    def ou_limit():
        g = float(gaussian_density(1.0, 0.2, 0.5))
        return abs(ou_density(0.2, 0.5, 1.0, 0.0) - g) < 1e-15 and abs(ou_density(0.2, 0.5, 1.0, 1e-12) - g) < 1e-10

    def tame_one():
        return float(tame_drift(np.array([2.0]), np.array([0.0]), 0.25, 0.5)[0]) == 2.0

    def aggregate_const():
        mean, se, n, _ = aggregate(np.full(10, 3.5))
        return mean == 3.5 and se == 0.0 and n == 10

    return [
        ("model.running_max", running_max),
        ("model.constant_drift", constant),
        ("model.delayed_lookup", delayed),
        ("model.constant_integral", integral),
        ("girsanov.weight_trivial", weight_zero),
        ("girsanov.martingale_zero_drift", martingale_zero),
        ("girsanov.novikov_partition", partition),
        ("girsanov.thresholds", threshold),
        ("parametrix.null_model", null_unbiased),
        ("closedforms.bangbang_beta0", bangbang),
        ("closedforms.ou_limit", ou_limit),
        ("schemes.taming_at_origin", tame_one),
        ("harness.aggregate_constant", aggregate_const),
    ]


def selftest() -> list:
    """Run the exact examples; returns ``[(name, passed, message)]``."""
    out = []
    for name, fn in _selftest_cases():
        try:
            ok, msg = bool(fn()), ""
        except Exception as exc:  # report, never raise
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        out.append((name, ok, msg))
    return out
