"""Model and experiment configuration files (TOML).

A model file looks like::

    dim = 1
    [drift]
    kind = "ou"
    params = { kappa = 1.0 }
    [diffusion]
    kind = "constant"
    matrix = 1.0
    [growth]
    K = 1.0
    sublinear = [{ delta = 0.5, K_delta = 2.0 }]
    [ellipticity]
    lower = 1.0
    upper = 1.0

plus optional per-command sections (``[density]``, ``[unbiased]`` ...)
whose keys supply defaults for the matching CLI flags. Every problem is
reported as a :class:`ConfigError` naming the field and, when it can be
located, the line.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .exceptions import ConfigError, DomainError
from .model import FunctionalSpec, PathDependentModel, _functional_from_dict, model_from_dict

COMMAND_SECTIONS = (
    "simulate",
    "density",
    "unbiased",
    "bangbang",
    "bounds",
    "convergence",
    "tamed-error",
    "cf-diagnostic",
)

_MODEL_KEYS = {
    "dim": int,
    "T": (int, float),
    "name": str,
    "drift": dict,
    "diffusion": dict,
    "growth": dict,
    "ellipticity": dict,
    "holder": dict,
    "functional": dict,
}

_SUBKEYS = {
    "drift": {"kind", "params"},
    "diffusion": {"kind", "matrix", "params", "field"},
    "growth": {"K", "bound", "sublinear"},
    "ellipticity": {"lower", "upper"},
    "holder": {"alpha", "norm"},
    "functional": {"zeta", "delays", "weights", "tail", "integrand", "nu", "beta", "gamma"},
}

_SPEC_KEYS = _SUBKEYS["functional"] | {"dim", "sigma", "x", "y", "t", "h", "m", "p", "functional"} | set(COMMAND_SECTIONS)


def _line_of(text: str, field: str):
    """Best-effort line number of ``field`` (dotted path) in the TOML text."""
    if not text or not field:
        return None
    parts = field.split(".")
    head, leaf = ".".join(parts[:-1]), re.escape(parts[-1])
    key = re.compile(r"(^|[{,])\s*" + leaf + r"\s*=")
    lines = text.splitlines()
    section = ""
    fallback = None
    for i, line in enumerate(lines, 1):
        m = re.match(r"^\s*\[+\s*([^\]]+?)\s*\]+", line)
        if m:
            section = m.group(1)
            if section == field:
                return i
            continue
        if key.search(line):
            if section == head or (head and head.split(".")[0] in line):
                return i
            fallback = fallback or i
    return fallback


def _toml_error(exc, source):
    msg = str(exc)
    line = getattr(exc, "lineno", None)
    if line is None:
        m = re.search(r"line (\d+)", msg)
        line = int(m.group(1)) if m else None
    msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", msg)
    return ConfigError(f"{source}: malformed TOML: {msg}", field=None, line=line)


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _toml_error(exc, source) from None


def read_file(path) -> tuple:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_text(text, str(path)), text


def config_digest(cfg) -> str:
    """SHA-256 of the canonical JSON form of ``cfg``."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _check_keys(cfg: dict, text, allowed: set, prefix: str = ""):
    for k in cfg:
        if k not in allowed:
            f = f"{prefix}{k}"
            raise ConfigError(f"unknown key {f!r}", field=f, line=_line_of(text, f))


def validate_model_dict(cfg: dict, text: str = None):
    _check_keys(cfg, text, set(_MODEL_KEYS) | set(COMMAND_SECTIONS))
    if "dim" not in cfg:
        raise ConfigError("missing required key 'dim'", field="dim", line=None)
    for k, typ in _MODEL_KEYS.items():
        if k in cfg and (not isinstance(cfg[k], typ) or isinstance(cfg[k], bool)):
            name = typ.__name__ if isinstance(typ, type) else "number"
            raise ConfigError(f"{k!r} must be a {name}", field=k, line=_line_of(text, k))
    if cfg["dim"] < 1:
        raise ConfigError("'dim' must be positive", field="dim", line=_line_of(text, "dim"))
    for sec, keys in _SUBKEYS.items():
        if sec in cfg:
            _check_keys(cfg[sec], text, keys, prefix=sec + ".")
    if "drift" in cfg and "kind" not in cfg["drift"]:
        raise ConfigError("drift needs a 'kind'", field="drift.kind", line=_line_of(text, "drift"))
    for i, entry in enumerate(cfg.get("growth", {}).get("sublinear", [])):
        if not isinstance(entry, dict) or set(entry) != {"delta", "K_delta"}:
            f = f"growth.sublinear[{i}]"
            raise ConfigError("sub-linear entries need exactly 'delta' and 'K_delta'", field=f,
                              line=_line_of(text, "sublinear"))
    for sec in COMMAND_SECTIONS:
        if sec in cfg and not isinstance(cfg[sec], dict):
            raise ConfigError(f"[{sec}] must be a table", field=sec, line=_line_of(text, sec))


def _field_of(exc: Exception) -> str:
    msg = str(exc)
    for key in ("drift kind", "diffusion kind", "diffusion field", "nu kind"):
        if key in msg:
            return key.replace(" ", ".") if not key.startswith("nu") else "functional.nu"
    for key in ("drift", "diffusion", "ellipticity", "holder", "growth", "functional", "dim"):
        if key in msg.lower():
            return key
    if "sigma" in msg or "eigen" in msg:
        return "diffusion"
    if "nu." in msg or "zeta" in msg or "delay" in msg or "integrand" in msg:
        return "functional"
    return "drift"


def build_model(cfg: dict, text: str = None) -> PathDependentModel:
    validate_model_dict(cfg, text)
    try:
        return model_from_dict(cfg)
    except (DomainError, TypeError, ValueError, KeyError) as exc:
        f = _field_of(exc)
        raise ConfigError(f"invalid model: {exc}", field=f, line=_line_of(text, f)) from None


def load_model(path) -> tuple:
    """``(model, raw mapping)`` from a model file."""
    cfg, text = read_file(path)
    return build_model(cfg, text), cfg


def load_functional_spec(path) -> tuple:
    """``(FunctionalSpec, raw mapping)``; the spec may sit at top level or under ``[functional]``."""
    cfg, text = read_file(path)
    _check_keys(cfg, text, _SPEC_KEYS)
    body = dict(cfg.get("functional", {}))
    for k in _SUBKEYS["functional"]:
        if k in cfg:
            body[k] = cfg[k]
    dim = cfg.get("dim", 1)
    if not isinstance(dim, int) or dim < 1:
        raise ConfigError("'dim' must be a positive integer", field="dim", line=_line_of(text, "dim"))
    try:
        spec = _functional_from_dict(body, dim)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid functional: {exc}", field="nu", line=_line_of(text, "nu")) from None
    return spec, cfg


def command_section(cfg: dict, command: str) -> dict:
    return dict(cfg.get(command, {})) if cfg else {}


__all__ = [
    "COMMAND_SECTIONS",
    "FunctionalSpec",
    "build_model",
    "command_section",
    "config_digest",
    "load_functional_spec",
    "load_model",
    "parse_text",
    "read_file",
    "validate_model_dict",
]
