"""Experiment configuration files (YAML).

A file is a mapping with a ``command`` key and command-specific sections;
unknown keys anywhere are rejected.  See ``docs/config.md`` for the schema.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import yaml

from .base_dist import BaseDistribution, DomainError

COMMANDS = ("fit", "variance-sweep", "maxstats", "lowerbound", "dim-sweep")
FAMILIES = ("mean-field", "full-rank")
TARGET_KINDS = ("quadratic", "perturbed-quadratic")
FORMATS = ("csv", "json-lines")
EMAX_MODES = ("empirical", "mgf", "moment", "gaussian_special", "auto")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class TargetConfig:
    kind: str = "quadratic"
    d: int = 10
    mu: float = 1.0
    L: float | None = None
    kappa: float | None = None
    delta: float = 0.0
    hessian: object = "logspace"
    seed: int | None = 0


@dataclass(frozen=True)
class GridConfig:
    d: tuple = ()
    kappa: tuple = ()
    delta: tuple = ()
    dist: tuple = ()
    family: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seeds: tuple = (0,)
    target: TargetConfig = field(default_factory=TargetConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    family: str = "mean-field"
    dist: str = "gaussian"
    T: int = 1000
    batch: int = 1
    schedule: object = "auto"
    n_samples: int = 100_000
    n_pairs: int = 10
    emax_trials: int = 20_000
    emax_mode: str = "auto"
    t: float = 0.5
    L: float = 10.0
    eps_rel: float = 0.01
    T_max: int = 100_000
    full_rank_max_d: int = 64
    trace_every: int = 1
    format: str = "csv"
    output: str | None = None

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=str))

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=_seeds(seeds))


_TOP_KEYS = {
    "command", "seeds", "target", "grid", "family", "dist", "T", "batch", "schedule",
    "samples", "lowerbound", "sweep", "output",
}
_TARGET_KEYS = {"kind", "d", "mu", "L", "kappa", "delta", "hessian", "seed"}
_GRID_KEYS = {"d", "kappa", "delta", "dist", "family"}
_SAMPLE_KEYS = {"n", "pairs", "emax_trials", "emax_mode"}
_LB_KEYS = {"t", "L"}
_SWEEP_KEYS = {"eps_rel", "T_max", "full_rank_max_d"}
_OUTPUT_KEYS = {"format", "path", "trace_every"}
_SCHEDULE_KEYS = {"gamma0", "t_star"}


def _check_keys(section: str, got: dict, allowed: set):
    if not isinstance(got, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _pos_int(name, v, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {v!r}")
    return v


def _pos_float(name, v, allow_zero=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    if v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {v!r}")
    return float(v)


def _seeds(seeds) -> tuple:
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    elif isinstance(seeds, dict):
        _check_keys("seeds", seeds, {"start", "count"})
        start = _pos_int("seeds.start", seeds.get("start", 0), minimum=0)
        seeds = list(range(start, start + _pos_int("seeds.count", seeds.get("count"))))
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("seeds must be a non-empty list of integers")
    for s in seeds:
        _pos_int("seed", s, minimum=0)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct; duplicate seed values found")
    return tuple(seeds)


def _dist(text) -> str:
    if not isinstance(text, str):
        raise ConfigError(f"dist must be a string such as 'student-t:8', got {text!r}")
    try:
        return str(BaseDistribution.parse(text))
    except DomainError as exc:
        raise ConfigError(f"invalid base distribution {text!r}: {exc} (student-t needs nu > 4)") from None
    except ValueError as exc:
        raise ConfigError(f"invalid base distribution {text!r}: {exc}") from None


def _grid_list(name, v, conv):
    if not isinstance(v, (list, tuple)):
        v = [v]
    if not v:
        raise ConfigError(f"grid.{name} must be non-empty")
    out = tuple(conv(f"grid.{name}", x) for x in v)
    if len(set(out)) != len(out):
        raise ConfigError(f"grid.{name} contains duplicates")
    return out


def parse_config_text(text: str, *, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {source}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"malformed config file {source}: top level must be a mapping")
    return from_mapping(raw)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def from_mapping(raw: dict) -> ExperimentConfig:
    _check_keys("config", raw, _TOP_KEYS)
    command = raw.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}; got {command!r}")
    kw: dict = {"command": command}
    if "seeds" in raw:
        kw["seeds"] = _seeds(raw["seeds"])

    t_raw = raw.get("target", {}) or {}
    _check_keys("target", t_raw, _TARGET_KEYS)
    tkw = dict(t_raw)
    if "kind" in tkw and tkw["kind"] not in TARGET_KINDS:
        raise ConfigError(f"target.kind must be one of {', '.join(TARGET_KINDS)}")
    if "d" in tkw:
        tkw["d"] = _pos_int("target.d", tkw["d"])
    for key in ("mu", "L", "kappa"):
        if tkw.get(key) is not None:
            tkw[key] = _pos_float(f"target.{key}", tkw[key])
    if "delta" in tkw:
        tkw["delta"] = _pos_float("target.delta", tkw["delta"], allow_zero=True)
    if "seed" in tkw and tkw["seed"] is not None:
        _pos_int("target.seed", tkw["seed"], minimum=0)
    hess = tkw.get("hessian", "logspace")
    if isinstance(hess, list):
        tkw["hessian"] = tuple(_pos_float("target.hessian entry", x) for x in hess)
    elif hess not in ("logspace", "identity", "rotated-logspace"):
        raise ConfigError("target.hessian must be 'logspace', 'identity', 'rotated-logspace' or a list")
    target = TargetConfig(**tkw)
    if target.kind == "quadratic" and target.delta != 0:
        raise ConfigError("quadratic targets require delta = 0")
    if target.L is not None and target.kappa is not None:
        raise ConfigError("give target.L or target.kappa, not both")
    kw["target"] = target

    g_raw = raw.get("grid", {}) or {}
    _check_keys("grid", g_raw, _GRID_KEYS)
    gkw = {}
    if "d" in g_raw:
        gkw["d"] = _grid_list("d", g_raw["d"], _pos_int)
    if "kappa" in g_raw:
        gkw["kappa"] = _grid_list("kappa", g_raw["kappa"], _pos_float)
        if any(k < 1 for k in gkw["kappa"]):
            raise ConfigError("grid.kappa entries must be >= 1")
    if "delta" in g_raw:
        gkw["delta"] = _grid_list("delta", g_raw["delta"], lambda n, v: _pos_float(n, v, allow_zero=True))
    if "dist" in g_raw:
        gkw["dist"] = _grid_list("dist", g_raw["dist"], lambda n, v: _dist(v))
    if "family" in g_raw:
        gkw["family"] = _grid_list("family", g_raw["family"], _family)
    kw["grid"] = GridConfig(**gkw)

    if "family" in raw:
        kw["family"] = _family("family", raw["family"])
    if "dist" in raw:
        kw["dist"] = _dist(raw["dist"])
    if "T" in raw:
        kw["T"] = _pos_int("T", raw["T"])
    if "batch" in raw:
        kw["batch"] = _pos_int("batch", raw["batch"])
    if "schedule" in raw:
        kw["schedule"] = _schedule(raw["schedule"])

    s_raw = raw.get("samples", {}) or {}
    _check_keys("samples", s_raw, _SAMPLE_KEYS)
    if "n" in s_raw:
        kw["n_samples"] = _pos_int("samples.n", s_raw["n"], minimum=100)
    if "pairs" in s_raw:
        kw["n_pairs"] = _pos_int("samples.pairs", s_raw["pairs"])
    if "emax_trials" in s_raw:
        kw["emax_trials"] = _pos_int("samples.emax_trials", s_raw["emax_trials"], minimum=100)
    if "emax_mode" in s_raw:
        if s_raw["emax_mode"] not in EMAX_MODES:
            raise ConfigError(f"samples.emax_mode must be one of {', '.join(EMAX_MODES)}")
        kw["emax_mode"] = s_raw["emax_mode"]

    lb = raw.get("lowerbound", {}) or {}
    _check_keys("lowerbound", lb, _LB_KEYS)
    if "t" in lb:
        kw["t"] = _pos_float("lowerbound.t", lb["t"])
    if "L" in lb:
        kw["L"] = _pos_float("lowerbound.L", lb["L"])

    sw = raw.get("sweep", {}) or {}
    _check_keys("sweep", sw, _SWEEP_KEYS)
    if "eps_rel" in sw:
        kw["eps_rel"] = _pos_float("sweep.eps_rel", sw["eps_rel"])
    if "T_max" in sw:
        kw["T_max"] = _pos_int("sweep.T_max", sw["T_max"])
    if "full_rank_max_d" in sw:
        kw["full_rank_max_d"] = _pos_int("sweep.full_rank_max_d", sw["full_rank_max_d"])

    out = raw.get("output", {}) or {}
    _check_keys("output", out, _OUTPUT_KEYS)
    if "format" in out:
        if out["format"] not in FORMATS:
            raise ConfigError(f"output.format must be one of {', '.join(FORMATS)}")
        kw["format"] = out["format"]
    if "path" in out:
        kw["output"] = str(out["path"])
    if "trace_every" in out:
        kw["trace_every"] = _pos_int("output.trace_every", out["trace_every"])

    cfg = ExperimentConfig(**kw)
    if cfg.command == "fit" and isinstance(cfg.schedule, dict):
        check_schedule_constraint(cfg)
    return cfg


def _family(name, v):
    if v not in FAMILIES:
        raise ConfigError(f"{name} must be one of {', '.join(FAMILIES)}, got {v!r}")
    return v


def _schedule(v):
    if v == "auto":
        return "auto"
    _check_keys("schedule", v, _SCHEDULE_KEYS)
    if set(v) != _SCHEDULE_KEYS:
        raise ConfigError("schedule must be 'auto' or give both gamma0 and t_star")
    return {"gamma0": _pos_float("schedule.gamma0", v["gamma0"]), "t_star": _pos_int("schedule.t_star", v["t_star"], minimum=0)}


def check_schedule_constraint(cfg: ExperimentConfig):
    """Reject an explicit ``gamma0`` above ``mu / (2 L^2)`` for the configured target."""
    from .experiments import build_target, smoothness_sq

    dist = BaseDistribution.parse(cfg.dist)
    target = build_target(cfg.target)
    try:
        lsq = smoothness_sq(target, dist, cfg.family)
    except DomainError:
        return
    cap = target.mu / (2.0 * lsq)
    if cfg.schedule["gamma0"] > cap:
        raise ConfigError(
            f"schedule.gamma0={cfg.schedule['gamma0']} violates the step-size constraint "
            f"gamma0 <= mu/(2 L^2) = {cap:.6g} for this target"
        )


def check_output_writable(path) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(d):
        raise ConfigError(f"output directory does not exist: {d}")
    if not os.access(d, os.W_OK):
        raise ConfigError(f"output directory is not writable: {d}")
