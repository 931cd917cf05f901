"""Command-line entry point: ``pathdrift <command> [options]``.

Exit codes: 0 success, 1 self-test failure, 2 configuration or usage error,
3 numerical failure. ``PATHDRIFT_SEED`` overrides ``--seed``. Without
``--record-timing`` the ``wall_ms`` fields stay empty so that repeated runs
give byte-identical CSV.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DomainError, NumericError, UnsupportedMethodError

_DENSITY_COLUMNS = ["method", "t", "x", "y", "estimate", "stderr", "n_samples", "bandwidth", "seed", "wall_ms"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


# ----------------------------------------------------------------------------
# argument helpers


def _floats(text, name="value") -> list:
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {name} {text!r} as a list of numbers", field=name) from None


def _power(term: str) -> float:
    term = term.strip()
    m = re.fullmatch(r"([0-9.]+)\^(-?\d+)", term)
    if m:
        return float(m.group(1)) ** int(m.group(2))
    return float(term)


def parse_eps(text) -> list:
    """``2^-3..2^-7`` (every power in between), or a comma list."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text)
    m = re.fullmatch(r"\s*([0-9.]+)\^(-?\d+)\s*\.\.\s*([0-9.]+)\^(-?\d+)\s*", text)
    try:
        if m:
            base, a, base2, b = float(m.group(1)), int(m.group(2)), float(m.group(3)), int(m.group(4))
            if base != base2:
                raise ValueError
            step = -1 if b < a else 1
            return [base ** k for k in range(a, b + step, step)]
        return [_power(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --eps {text!r}", field="eps") from None


def _ints(text, name) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {name} {text!r} as integers", field=name) from None


def _resolve_seed(args) -> int:
    env = os.environ.get("PATHDRIFT_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"PATHDRIFT_SEED={env!r} is not an integer", field="PATHDRIFT_SEED") from None
    return int(args.seed)


def _pick(args, section: dict, name: str, default=None):
    v = getattr(args, name.replace("-", "_"), None)
    if v is not None:
        return v
    return section.get(name, section.get(name.replace("-", "_"), default))


def _workers(args) -> int:
    from .rng import default_workers

    return int(args.workers) if args.workers else default_workers()


def _vec(values, dim, name):
    if values is None:
        raise ConfigError(f"--{name} is required", field=name)
    arr = np.asarray(values, dtype=float)
    if arr.size == 1 and dim > 1:
        arr = np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise ConfigError(f"--{name} needs {dim} component(s), got {arr.size}", field=name)
    return arr


# ----------------------------------------------------------------------------
# commands; each returns (rows, columns, digest source)


def _cmd_simulate(args, seed):
    from .config import command_section, load_model
    from .schemes import simulate_terminal
    from .stats import Moments

    model, cfg = load_model(args.model)
    sec = command_section(cfg, "simulate")
    x = _vec(_floats(_pick(args, sec, "x", 0.0), "x"), model.dim, "x")
    t = float(_pick(args, sec, "t", model.T))
    n = int(_pick(args, sec, "samples", 10_000))
    steps = int(_pick(args, sec, "steps", 256))
    ell = _pick(args, sec, "tamed-ell")
    X = simulate_terminal(model, x, t, n, steps, seed=seed, workers=_workers(args), block_size=args.block_size,
                          tamed_ell=None if ell is None else float(ell))
    rows = []
    for i in range(model.dim):
        col = X[:, i]
        with np.errstate(over="ignore", invalid="ignore"):
            mom = Moments.from_array(col)
        if not (np.isfinite(mom.mean) and np.isfinite(mom.m2)):
            raise NumericError(f"terminal statistics of coordinate {i} overflowed")
        rows.append({
            "coordinate": i, "t": t, "x": x[i], "mean": mom.mean, "stderr": mom.stderr,
            "variance": mom.variance, "kurtosis": mom.kurtosis, "n_samples": mom.n, "n_steps": steps, "seed": seed,
        })
    cols = ["coordinate", "t", "x", "mean", "stderr", "variance", "kurtosis", "n_samples", "n_steps", "seed", "wall_ms"]
    return rows, cols, cfg


def _density_points(args, sec, model):
    x = _vec(_floats(_pick(args, sec, "x"), "x"), model.dim, "x")
    ys = _floats(_pick(args, sec, "y"), "y")
    if ys is None:
        raise ConfigError("--y is required", field="y")
    ys = np.asarray(ys, dtype=float).reshape(-1, model.dim)
    t = float(_pick(args, sec, "t", model.T))
    return x, ys, t


def _cmd_density(args, seed):
    from .config import command_section, load_model
    from .girsanov import FirstOrderDensity, GirsanovKernelDensity

    model, cfg = load_model(args.model)
    sec = command_section(cfg, "density")
    method = _pick(args, sec, "method", "girsanov")
    x, ys, t = _density_points(args, sec, model)
    n = int(_pick(args, sec, "samples", 10_000))
    steps = int(_pick(args, sec, "steps", 256))
    common = dict(model=model, t=t, n_samples=n, n_steps=steps, seed=seed, workers=_workers(args),
                  block_size=args.block_size)
    if method == "girsanov":
        bw = _pick(args, sec, "bandwidth")
        est = GirsanovKernelDensity(bandwidth=None if bw is None else float(bw), **common).fit(x)
    elif method == "first-order":
        est = FirstOrderDensity(quad_nodes=int(_pick(args, sec, "quad-nodes", 24)), **common).fit(x)
    else:
        raise ConfigError(f"unknown method {method!r}", field="method")
    rows = []
    for e in est.estimate(ys):
        rows.append({
            "method": e.method, "t": t, "x": e.x, "y": e.y, "estimate": e.value, "stderr": e.stderr,
            "n_samples": e.n_samples, "bandwidth": e.bandwidth, "seed": seed,
        })
    return rows, list(_DENSITY_COLUMNS), cfg


def _cmd_unbiased(args, seed):
    from .config import command_section, load_model
    from .parametrix import CountingSpec, UnbiasedDensity

    model, cfg = load_model(args.model)
    sec = command_section(cfg, "unbiased")
    x, ys, t = _density_points(args, sec, model)
    counting = str(_pick(args, sec, "counting", "exp:1"))
    try:
        CountingSpec.parse(counting, model.T)
    except (DomainError, ValueError) as exc:
        raise ConfigError(str(exc), field="counting") from None
    n = int(_pick(args, sec, "samples", 10_000))
    est = UnbiasedDensity(model, t=t, counting=counting, n_samples=n, seed=seed, workers=_workers(args),
                          block_size=args.block_size).fit(x)
    rows = []
    for e in est.estimate(ys):
        rows.append({
            "method": e.method, "t": t, "x": e.x, "y": e.y, "estimate": e.value, "stderr": e.stderr,
            "n_samples": e.n_samples, "bandwidth": None, "seed": seed, "counting": counting,
            "mean_jumps": e.extras.get("mean_jumps"), "kurtosis": e.extras.get("kurtosis"),
        })
    return rows, _DENSITY_COLUMNS + ["counting", "mean_jumps", "kurtosis"], cfg


def _cmd_bangbang(args, seed):
    from .closedforms import bangbang_bracket

    x = np.asarray(_floats(args.x, "x"))
    y = np.asarray(_floats(args.y, "y"))
    if x.size != y.size:
        raise ConfigError("--x and --y must have the same number of components", field="y")
    if args.t is None or args.bsup is None:
        raise ConfigError("--t and --bsup are required", field="t" if args.t is None else "bsup")
    try:
        lo, hi = bangbang_bracket(x, y, float(args.t), float(args.bsup), verbatim=args.verbatim)
    except DomainError as exc:
        raise ConfigError(str(exc), field="bsup") from None
    row = {"x": x, "y": y, "t": float(args.t), "b_sup": float(args.bsup), "lower": lo, "upper": hi,
           "prefactor": "verbatim" if args.verbatim else "heat-kernel"}
    return [row], ["x", "y", "t", "b_sup", "lower", "upper", "prefactor"], {"bangbang": vars(args)}


def _cmd_bounds(args, seed):
    from .closedforms import GaussianEnvelope, calibrate_envelope, envelope_bracket
    from .config import command_section, load_model
    from .girsanov import GirsanovKernelDensity

    model, cfg = load_model(args.model)
    sec = command_section(cfg, "bounds")
    x = _vec(_floats(_pick(args, sec, "x", 0.0), "x"), model.dim, "x")
    grid = _floats(_pick(args, sec, "grid", "-1,-0.5,0,0.5,1"), "grid")
    ys = np.asarray(grid, dtype=float).reshape(-1, model.dim)
    t = float(_pick(args, sec, "t", model.T))
    n = int(_pick(args, sec, "samples", 10_000))
    bw = _pick(args, sec, "bandwidth")
    est = GirsanovKernelDensity(model, t=t, bandwidth=None if bw is None else float(bw), n_samples=n,
                                n_steps=int(_pick(args, sec, "steps", 128)), seed=seed, workers=_workers(args),
                                block_size=args.block_size).fit(x)
    ests = est.estimate(ys)
    if _pick(args, sec, "calibrate", False):
        env = calibrate_envelope(ests, t).envelope
    else:
        consts = sec.get("envelope")
        if not consts:
            raise ConfigError("supply [bounds].envelope constants or pass --calibrate", field="bounds.envelope")
        try:
            env = GaussianEnvelope(**consts)
        except (TypeError, DomainError) as exc:
            raise ConfigError(str(exc), field="bounds.envelope") from None
    rows = []
    for e in ests:
        lo, hi = envelope_bracket(env, x, e.y, t)
        a, b = e.interval(3.0)
        rows.append({
            "x": x, "y": e.y, "t": t, "estimate": e.value, "stderr": e.stderr, "lower": lo, "upper": hi,
            "inside": bool(lo <= a and b <= hi), "C_minus": env.C_minus, "c_minus": env.c_minus,
            "C_plus": env.C_plus, "c_plus": env.c_plus, "bandwidth": e.bandwidth, "seed": seed,
        })
    cols = ["x", "y", "t", "estimate", "stderr", "lower", "upper", "inside", "C_minus", "c_minus", "C_plus",
            "c_plus", "bandwidth", "seed", "wall_ms"]
    return rows, cols, cfg


def _cmd_convergence(args, seed):
    from .config import command_section, load_functional_spec
    from .convergence import density_rate_experiment, drift_discretization_error
    from .model import ConstantDiffusion, FunctionalDrift, PathDependentModel

    spec, cfg = load_functional_spec(args.spec)
    sec = command_section(cfg, "convergence")
    levels = _ints(_pick(args, sec, "levels", "64,128,256,512"), "levels")
    m = _pick(args, sec, "m", cfg.get("m"))
    m = None if m is None else int(m)
    n = int(_pick(args, sec, "samples", 10_000))
    x = _vec(_floats(_pick(args, sec, "x", cfg.get("x", 0.0)), "x"), spec.dim, "x")
    t = float(_pick(args, sec, "t", cfg.get("t", 0.5)))
    sigma = cfg.get("sigma", 1.0)
    kind = _pick(args, sec, "kind", "density")
    if kind == "drift":
        p = float(_pick(args, sec, "p", cfg.get("p", 2.0)))
        res = drift_discretization_error(spec, x, t, levels, m, p=p, N=n, seed=seed, sigma=sigma,
                                         workers=_workers(args))
        rows = [{"kind": kind, "n": r.n, "m": m, "error": r.error, "stderr": r.stderr, "s_max": r.s_max,
                 "tail_mass": r.tail_mass, "seed": seed} for r in res]
        return rows, ["kind", "n", "m", "error", "stderr", "s_max", "tail_mass", "seed", "wall_ms"], cfg
    if kind != "density":
        raise ConfigError(f"unknown convergence kind {kind!r}", field="kind")
    y = _vec(_floats(_pick(args, sec, "y", cfg.get("y", 0.0)), "y"), spec.dim, "y")
    h = _pick(args, sec, "bandwidth", cfg.get("h"))
    try:
        model = PathDependentModel(dim=spec.dim, drift=FunctionalDrift(spec), diffusion=ConstantDiffusion(sigma, spec.dim))
    except DomainError as exc:
        raise ConfigError(str(exc), field="sigma") from None
    res = density_rate_experiment(spec, model, x, y, t, levels, m, n, h=None if h is None else float(h), seed=seed,
                                  workers=_workers(args))
    tail = next(iter(res.tail_mass.values()))
    rows = [{"kind": kind, "n": lv, "m": m, "error": e, "stderr": s, "fitted_slope": res.fitted_slope,
             "ci_low": res.slope_CI[0], "ci_high": res.slope_CI[1], "tail_mass": tail, "bandwidth": res.bandwidth,
             "seed": seed} for lv, e, s in res.levels]
    cols = ["kind", "n", "m", "error", "stderr", "fitted_slope", "ci_low", "ci_high", "tail_mass", "bandwidth",
            "seed", "wall_ms"]
    return rows, cols, cfg


def _cmd_tamed(args, seed):
    from .config import command_section, load_model
    from .schemes import strong_error_sweep

    model, cfg = load_model(args.model)
    sec = command_section(cfg, "tamed-error")
    eps = parse_eps(_pick(args, sec, "eps", "2^-3..2^-7"))
    t = float(_pick(args, sec, "t", model.T))
    n = int(_pick(args, sec, "replications", 10_000))
    x0 = _vec(_floats(_pick(args, sec, "x", 1.0), "x"), model.dim, "x")
    ell = float(_pick(args, sec, "ell", 0.25))
    res = strong_error_sweep(model, x0, t, eps, n, seed=seed, ell=ell, workers=_workers(args))
    rows = [{"epsilon": r.epsilon, "mse": r.mse, "stderr": r.stderr, "n_samples": r.n_samples, "status": r.status,
             "slope": res.slope, "ell": ell, "seed": seed} for r in res.rows]
    return rows, ["epsilon", "mse", "stderr", "n_samples", "status", "slope", "ell", "seed", "wall_ms"], cfg


def _cmd_cf(args, seed):
    from .config import command_section, load_model
    from .harness import cf_decay_diagnostic

    model, cfg = load_model(args.model)
    sec = command_section(cfg, "cf-diagnostic")
    x = _vec(_floats(_pick(args, sec, "x", 0.0), "x"), model.dim, "x")
    t = float(_pick(args, sec, "t", model.T))
    xi = _floats(_pick(args, sec, "xi", "0.5,1,1.5,2,3,4,6,8"), "xi")
    ell = _pick(args, sec, "tamed-ell")
    res = cf_decay_diagnostic(model, x, t, float(_pick(args, sec, "delta", 0.5)), xi,
                              int(_pick(args, sec, "samples", 10_000)), n_fine=int(_pick(args, sec, "steps", 1024)),
                              seed=seed, tamed_ell=None if ell is None else float(ell), workers=_workers(args),
                              block_size=args.block_size)
    rows = [dict(r, l2_integral=res.l2_integral, decay_exponent=res.decay_exponent, n_samples=res.n_samples,
                 seed=seed) for r in res.rows()]
    return rows, ["xi", "modulus", "stderr", "l2_integral", "decay_exponent", "n_samples", "seed", "wall_ms"], cfg


def _cmd_selftest(args, seed):
    from .harness import selftest

    res = selftest()
    rows = [{"case": name, "passed": ok, "message": msg} for name, ok, msg in res]
    return rows, ["case", "passed", "message"], {"selftest": True}


_COMMANDS = {
    "simulate": _cmd_simulate,
    "density": _cmd_density,
    "unbiased": _cmd_unbiased,
    "bangbang": _cmd_bangbang,
    "bounds": _cmd_bounds,
    "convergence": _cmd_convergence,
    "tamed-error": _cmd_tamed,
    "cf-diagnostic": _cmd_cf,
    "selftest": _cmd_selftest,
}


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (PATHDRIFT_SEED overrides)")
    common.add_argument("--workers", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--block-size", type=int, default=8192, help="samples per random-stream block")
    common.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")
    common.add_argument("--json", default=None, help="optional JSON mirror path")
    common.add_argument("--record-timing", action="store_true", help="fill the wall_ms fields")

    p = _Parser(prog="pathdrift", description="Transition densities of SDEs with path-dependent drift")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_cmd(name, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--model", required=True, help="model file (TOML)")
        return s

    s = model_cmd("simulate", "Euler terminal statistics")
    s.add_argument("--x")
    s.add_argument("--t", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--tamed-ell", type=float)

    s = model_cmd("density", "Girsanov-kernel or first-order density estimate")
    s.add_argument("--method", choices=["girsanov", "first-order"])
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--t", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--bandwidth", type=float)
    s.add_argument("--quad-nodes", type=int)
    s.add_argument("--steps", type=int)

    s = model_cmd("unbiased", "unbiased parametrix density estimate")
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--t", type=float)
    s.add_argument("--counting", help="exp:LAMBDA or beta:BETA")
    s.add_argument("--samples", type=int)

    s = sub.add_parser("bangbang", parents=[common], help="bang-bang bracket at (x, y, t)")
    s.add_argument("--x", required=True)
    s.add_argument("--y", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--bsup", type=float, required=True)
    s.add_argument("--verbatim", action="store_true", help="use the 2/sqrt(2 pi t) prefactor")

    s = model_cmd("bounds", "Gaussian envelope experiment")
    s.add_argument("--x")
    s.add_argument("--grid", help="comma list of target points")
    s.add_argument("--t", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--bandwidth", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--calibrate", action="store_true", default=None)

    s = sub.add_parser("convergence", parents=[common], help="path-dependent Euler error rates")
    s.add_argument("--spec", required=True, help="functional specification file (TOML)")
    s.add_argument("--levels")
    s.add_argument("--m", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--kind", choices=["density", "drift"])
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--t", type=float)
    s.add_argument("--bandwidth", type=float)
    s.add_argument("--p", type=float)

    s = model_cmd("tamed-error", "one-step tamed strong error sweep")
    s.add_argument("--t", type=float)
    s.add_argument("--eps", help="e.g. 2^-3..2^-7 or a comma list")
    s.add_argument("--replications", type=int)
    s.add_argument("--x")
    s.add_argument("--ell", type=float)

    s = model_cmd("cf-diagnostic", "smoothed characteristic function decay")
    s.add_argument("--x")
    s.add_argument("--t", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--xi", help="comma list of frequencies")
    s.add_argument("--samples", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--tamed-ell", type=float)

    sub.add_parser("selftest", parents=[common], help="run the exact examples")
    return p


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text, encoding="utf-8")


def run_cli(argv=None) -> int:
    from .config import config_digest
    from .harness import ExperimentReport

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        seed = _resolve_seed(args)
        if args.block_size < 1:
            raise ConfigError("--block-size must be positive", field="block-size")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be positive", field="workers")
        t0 = time.perf_counter()
        rows, cols, cfg = _COMMANDS[args.command](args, seed)
        wall = int(round(1000 * (time.perf_counter() - t0)))
    except ConfigError as exc:
        sys.stderr.write(f"pathdrift {args.command}: configuration error: {exc}\n")
        return 2
    except (UnsupportedMethodError, DomainError) as exc:
        sys.stderr.write(f"pathdrift {args.command}: invalid input: {exc}\n")
        return 2
    except (NumericError, FloatingPointError, OverflowError) as exc:
        sys.stderr.write(f"pathdrift {args.command}: numerical error: {exc}\n")
        return 3
    timing = wall if args.record_timing else None
    for r in rows:
        if "wall_ms" in cols:
            r["wall_ms"] = timing
    digest_src = {"command": args.command, "config": cfg,
                  "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "json", "record_timing", "workers")}}
    report = ExperimentReport(args.command, config_digest(digest_src), rows, timing, seed, columns=cols)
    _write(args.out, report.to_csv())
    if args.json:
        _write(args.json, report.to_json())
    if args.command == "selftest":
        failed = [r for r in rows if not r["passed"]]
        for r in failed:
            sys.stderr.write(f"selftest FAILED: {r['case']} {r['message']}\n")
        return 1 if failed else 0
    return 0


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":  # pragma: no cover
    main()


__all__ = ["build_parser", "main", "parse_eps", "run_cli"]
