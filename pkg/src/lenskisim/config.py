"""Flat ``key = value`` run configuration.

Blank lines and lines starting with ``#`` are ignored. Values from the
command line override values from the file, which override the defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .params import ModelParams, ParameterError

EXPERIMENTS = ("neutral-day", "fixation", "sweep-stages", "genealogy", "gw", "evolve", "curves")

_INT_KEYS = {"N", "replicates", "seed", "threads", "record_every", "horizon", "k0", "n",
             "coalescence_replicates", "max_generations", "block_size"}
_FLOAT_KEYS = {"gamma", "r0", "rho", "mu", "b", "a", "q", "u", "alpha", "epsilon",
               "t_max", "t_step", "horizon_t"}
_STR_KEYS = {"experiment", "out", "rule", "tolerance_profile"}
_BOOL_KEYS = {"enforce_assumption_a"}

DEFAULTS: dict[str, Any] = {
    "N": 1000,
    "gamma": 2.0,
    "r0": 1.0,
    "q": 0.0,
    "replicates": 1000,
    "seed": 0,
    "threads": 1,
    "record_every": 1,
    "k0": 1,
    "n": 2,
    "alpha": 0.4,
    "epsilon": 0.05,
    "t_max": 10.0,
    "t_step": 0.1,
    "horizon_t": 2.0,
    "coalescence_replicates": 10_000,
    "rule": "expectation",
    "tolerance_profile": "default",
    "enforce_assumption_a": True,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _coerce(key: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in _INT_KEYS:
            val = float(text)
            if val != int(val):
                raise ValueError
            return int(val)
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _BOOL_KEYS:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if key in _STR_KEYS:
        return text
    raise ConfigError(f"unknown key {key!r}")


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path: Optional[str]) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


@dataclass
class RunConfig:
    experiment: str
    params: ModelParams
    replicates: int
    master_seed: int
    output_dir: Path
    record_every: int = 1
    threads: int = 1
    options: dict = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return dict(self.options)


def build_run_config(experiment: str, values: dict[str, Any]) -> RunConfig:
    """Merge ``values`` over the defaults and validate everything up front."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    merged = dict(DEFAULTS)
    merged.update({k: _coerce(k, v) for k, v in values.items() if v is not None})
    merged["experiment"] = experiment
    if "out" not in merged:
        raise ConfigError("an output directory is required (--out or out = ...)")
    if merged["replicates"] < 1:
        raise ConfigError("replicates must be >= 1")
    if merged["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if not 0 <= merged["seed"] < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if merged["rule"] not in ("expectation", "hitting"):
        raise ConfigError("rule must be 'expectation' or 'hitting'")
    if merged["tolerance_profile"] not in TOLERANCE_PROFILES:
        raise ConfigError(f"unknown tolerance profile {merged['tolerance_profile']!r}")
    try:
        params = _build_params(merged)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0 <= merged["k0"] <= params.N:
        raise ConfigError("k0 must lie in [0, N]")
    if not 0.0 < merged["epsilon"] < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")
    if merged["t_step"] <= 0.0 or merged["t_max"] < 0.0:
        raise ConfigError("need t_step > 0 and t_max >= 0")
    merged["rho"], merged["mu"] = params.rho, params.mu
    return RunConfig(
        experiment=experiment,
        params=params,
        replicates=merged["replicates"],
        master_seed=merged["seed"],
        output_dir=Path(merged["out"]),
        record_every=merged["record_every"],
        threads=merged["threads"],
        options=merged,
    )


def _build_params(m: dict[str, Any]) -> ModelParams:
    if "b" in m or "a" in m:
        if "b" not in m or "a" not in m:
            raise ParameterError("scalings need both a and b")
        if "rho" in m or "mu" in m:
            raise ParameterError("give either the scalings a, b or explicit rho, mu")
        return ModelParams.from_scalings(m["N"], m["gamma"], m["b"], m["a"], r0=m["r0"],
                                         q=m["q"], u=m.get("u"),
                                         enforce_assumption_a=m["enforce_assumption_a"])
    return ModelParams(N=m["N"], gamma=m["gamma"], r0=m["r0"], rho=m.get("rho", 0.0),
                       mu=m.get("mu", 0.0), q=m["q"], u=m.get("u"))


# relative tolerances per experiment; the profile scales them
BASE_TOLERANCES = {
    "neutral-day": 0.10,
    "fixation": 0.15,
    "sweep-stages": 0.05,
    "genealogy": 0.05,
    "gw": 0.10,
    "evolve": 0.10,
    "curves": 1e-8,
}
TOLERANCE_PROFILES = {"strict": 0.5, "default": 1.0, "loose": 2.0}


def tolerance_for(experiment: str, profile: str) -> float:
    if profile not in TOLERANCE_PROFILES:
        raise ConfigError(f"unknown tolerance profile {profile!r}")
    return BASE_TOLERANCES[experiment] * TOLERANCE_PROFILES[profile]
