"""
Run configuration for the command line front end.

A run is described by one TOML document::

    seed = 1
    output = "out"
    log_transform = false

    [grid]
    size = 24                # or: points = [0.0, 0.5, 1.0]

    [model]
    m0 = 0.0                 # scalar (broadcast) or one value per grid point

    [model.c0]
    sigma2 = 2.0
    beta = 1.0

    [model.v]
    estimate = true          # optional init_sigma2 / init_log_beta

    [model.w]
    sigma2 = 2.14e-4
    log_beta = -3.23         # or: beta = ...

    [prior]                  # PriorSpec fields
    [sampler]                # SamplerConfig fields, plus chains
    [simulate]
    days = 300
    start = "2000-01-01"
    [data]
    input = "data.csv"
    [summarize]
    draws = ["out/draws.csv"]
    [bands]
    level = 0.9

Command-line flags override the corresponding entries.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, FdlmError
from .kernel import Grid, OuParams
from .mcmc import PriorSpec, SamplerConfig

__all__ = ["KernelBlock", "RunConfig", "load_config", "config_hash"]

_TOP_KEYS = {"seed", "output", "log_transform", "grid", "model", "prior", "sampler", "simulate", "data", "summarize", "bands"}


@dataclass(frozen=True)
class KernelBlock:
    """Either fixed OU parameters or an instruction to estimate them."""

    estimate: bool
    params: Optional[OuParams] = None
    init: Optional[OuParams] = None

    def start(self, prior_shape, prior_rate, prior_logbeta_mean) -> OuParams:
        if not self.estimate:
            return self.params
        if self.init is not None:
            return self.init
        return OuParams.from_log_beta(prior_rate / max(prior_shape - 1.0, 1.0), prior_logbeta_mean)


def _number(section, key, value, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or (positive and value <= 0):
        raise ConfigError(f"{section}.{key}", f"must be finite{' and > 0' if positive else ''}, got {value!r}")
    return value


def _beta(section, raw, prefix=""):
    has_beta, has_log = f"{prefix}beta" in raw, f"{prefix}log_beta" in raw
    if has_beta and has_log:
        raise ConfigError(f"{section}.{prefix}beta", f"give either {prefix}beta or {prefix}log_beta, not both")
    if has_beta:
        return _number(section, f"{prefix}beta", raw[f"{prefix}beta"], positive=True)
    if has_log:
        return math.exp(_number(section, f"{prefix}log_beta", raw[f"{prefix}log_beta"]))
    return None


def _kernel_block(section, raw, allow_estimate=True) -> KernelBlock:
    if not isinstance(raw, dict):
        raise ConfigError(section, "missing or not a table")
    known = {"estimate", "sigma2", "beta", "log_beta", "init_sigma2", "init_beta", "init_log_beta"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    estimate = raw.get("estimate", False)
    if not isinstance(estimate, bool):
        raise ConfigError(f"{section}.estimate", "expected true or false")
    fixed_given = any(k in raw for k in ("sigma2", "beta", "log_beta"))
    if estimate:
        if not allow_estimate:
            raise ConfigError(f"{section}.estimate", "this parameter block cannot be estimated")
        if fixed_given:
            raise ConfigError(section, "give either estimate = true or fixed sigma2/beta, not both")
        init = None
        if any(k.startswith("init_") for k in raw):
            if "init_sigma2" not in raw:
                raise ConfigError(f"{section}.init_sigma2", "required together with an initial beta")
            beta = _beta(section, raw, "init_")
            init = OuParams(_number(section, "init_sigma2", raw["init_sigma2"], positive=True), beta or 1.0)
        return KernelBlock(True, init=init)
    if any(k.startswith("init_") for k in raw):
        raise ConfigError(section, "init_* keys are only allowed with estimate = true")
    if "sigma2" not in raw:
        raise ConfigError(f"{section}.sigma2", "required unless estimate = true")
    beta = _beta(section, raw)
    if beta is None:
        raise ConfigError(f"{section}.beta", "required unless estimate = true (beta or log_beta)")
    return KernelBlock(False, params=OuParams(_number(section, "sigma2", raw["sigma2"], positive=True), beta))


def _dataclass_from(cls, section, raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}", "unknown key")
        default = names[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key}", "expected true or false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{section}.{key}", f"expected an integer, got {value!r}")
        elif isinstance(default, float):
            value = _number(section, key, value)
        kwargs[key] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output: Path
    log_transform: bool
    grid: Grid
    m0: np.ndarray
    c0: KernelBlock
    v: KernelBlock
    w: KernelBlock
    prior: PriorSpec
    sampler: SamplerConfig
    chains: int
    days: int
    start: dt.date
    input: Optional[Path]
    draws_inputs: tuple
    band_level: float
    raw: Dict[str, Any]

    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _set(raw, dotted, value):
    node = raw
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(path=None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Parse and validate a config file; ``overrides`` maps dotted keys to values."""
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("--config", f"{path} is not valid TOML: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            _set(raw, key, value)
    return _validate(raw)


def _validate(raw) -> RunConfig:
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown top-level key")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"expected a non-negative integer, got {seed!r}")
    output = raw.get("output", "out")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "expected a non-empty path")
    log_transform = raw.get("log_transform", False)
    if not isinstance(log_transform, bool):
        raise ConfigError("log_transform", "expected true or false")

    graw = raw.get("grid", {"size": 24})
    if not isinstance(graw, dict):
        raise ConfigError("grid", "expected a table")
    if ("size" in graw) == ("points" in graw):
        raise ConfigError("grid", "give exactly one of grid.size or grid.points")
    try:
        if "size" in graw:
            size = graw["size"]
            if isinstance(size, bool) or not isinstance(size, int) or size < 1:
                raise ConfigError("grid.size", f"expected a positive integer, got {size!r}")
            grid = Grid.uniform(size)
        else:
            grid = Grid(graw["points"])
    except FdlmError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("grid.points", str(exc)) from None

    model = raw.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("model", "expected a table")
    m0_raw = model.get("m0", 0.0)
    if isinstance(m0_raw, list):
        m0 = np.array([_number("model", "m0", v) for v in m0_raw])
        if m0.shape != (len(grid),):
            raise ConfigError("model.m0", f"needs {len(grid)} values, got {m0.size}")
    else:
        m0 = np.full(len(grid), _number("model", "m0", m0_raw))
    c0 = _kernel_block("model.c0", model.get("c0", {"sigma2": 2.0, "beta": 1.0}), allow_estimate=False)
    v = _kernel_block("model.v", model.get("v", {"estimate": True}))
    w = _kernel_block("model.w", model.get("w", {"estimate": True}))
    for key in model:
        if key not in {"m0", "c0", "v", "w"}:
            raise ConfigError(f"model.{key}", "unknown key")

    prior = _dataclass_from(PriorSpec, "prior", raw.get("prior"))
    sraw = dict(raw.get("sampler") or {})
    chains = sraw.pop("chains", 1)
    if isinstance(chains, bool) or not isinstance(chains, int) or chains < 1:
        raise ConfigError("sampler.chains", f"expected a positive integer, got {chains!r}")
    sraw.setdefault("seed", seed)
    sraw["estimate_v"], sraw["estimate_w"] = v.estimate, w.estimate
    for key in ("estimate_v", "estimate_w"):
        if key in (raw.get("sampler") or {}):
            raise ConfigError(f"sampler.{key}", "set model.v / model.w estimate instead")
    sampler = _dataclass_from(SamplerConfig, "sampler", sraw)

    simraw = raw.get("simulate", {}) or {}
    days = simraw.get("days", 300)
    if isinstance(days, bool) or not isinstance(days, int) or days < 1:
        raise ConfigError("simulate.days", f"expected a positive integer, got {days!r}")
    start = simraw.get("start", "2000-01-01")
    try:
        start = start if isinstance(start, dt.date) else dt.date.fromisoformat(str(start))
    except ValueError:
        raise ConfigError("simulate.start", f"expected an ISO date, got {start!r}") from None

    draw_raw = (raw.get("data") or {}).get("input")
    if draw_raw is not None and not isinstance(draw_raw, str):
        raise ConfigError("data.input", "expected a path")
    summ = (raw.get("summarize") or {}).get("draws", [])
    if isinstance(summ, str):
        summ = [summ]
    if not all(isinstance(p, str) for p in summ):
        raise ConfigError("summarize.draws", "expected a list of paths")
    level = (raw.get("bands") or {}).get("level", 0.9)
    level = _number("bands", "level", level)
    if not 0 < level < 1:
        raise ConfigError("bands.level", f"must lie in (0, 1), got {level}")

    return RunConfig(
        seed=seed,
        output=Path(output),
        log_transform=log_transform,
        grid=grid,
        m0=m0,
        c0=c0,
        v=v,
        w=w,
        prior=prior,
        sampler=sampler,
        chains=chains,
        days=days,
        start=start,
        input=Path(draw_raw) if draw_raw else None,
        draws_inputs=tuple(Path(p) for p in summ),
        band_level=level,
        raw=raw,
    )
