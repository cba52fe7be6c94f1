"""Run configuration: one JSON object driving simulations and verification.

Shape:

    {
      "mechanism": {"alpha": .., "beta": .., "jumps": {...}},
      "sim":       {"dt": .., "horizon": .., "truncation_delta": ..,
                    "small_jump_mode": "drop_compensated", "seed": ..},
      "harness":   {...per-suite knobs, see DEFAULT_HARNESS...}
    }

Validation failures raise ConfigurationError naming the offending field.
Omitted harness keys fall back to the defaults below, which reproduce the
acceptance-scale verification runs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from .errors import ConfigurationError
from .mechanism import BranchingMechanism, mechanism_from_config, mechanism_to_config
from .paths import SimConfig, sim_config_from_config, sim_config_to_config

__all__ = ["RunConfig", "load_run_config", "run_config_from_dict",
           "DEFAULT_CONFIG", "DEFAULT_HARNESS"]


DEFAULT_HARNESS: dict = {
    "x": 1.0,
    "levels": [0.25, 0.5, 1.0],
    "lambdas": [0.5, 1.0, 2.0],
    "paths": 4000,
    "dts": [1e-3, 5e-4, 2.5e-4],
    "residual_levels": [0.25, 0.5, 0.75, 1.0],
    "level_width": None,
    "mean_budget": 0.02,
    "laplace_budget": 0.05,
    "boxes": [{"a": [0.0, 0.5], "z": [0.8, 1.2], "u": [0.0, 0.5]}],
    "theorem1": {"paths": 8000, "horizon": 24.0},
    "tanaka": {"paths": 3000, "t": 2.0},
    "noise": {"a": 1.0, "u_max": 1.0, "dt": 1e-3, "horizon": 24.0,
              "paths": 4000, "level_width": 0.05},
    "poisson": {"x": 4.0, "dt": 5e-4, "horizon": 60.0, "paths": 4000,
                "level_width": 0.05},
    "reflected": {"t": 1.0, "paths": 3000, "band_mult": 16.0},
    "example": {"paths": 5000, "dt": 2e-4, "t": 1.0},
    "exponent_check": {"paths": 2000, "dt": 0.01, "t": 2.0,
                       "lambdas": [0.5, 1.0]},
    "oracle_alpha_offset": 0.0,
    "out_dir": "out",
}

DEFAULT_CONFIG: dict = {
    "mechanism": {"alpha": 0.5, "beta": 1.0,
                  "jumps": {"atoms": [], "power_law": None}},
    "sim": {"dt": 2.5e-4, "horizon": 30.0, "truncation_delta": 0.0,
            "small_jump_mode": "drop_compensated", "seed": 7},
    "harness": {},
}


@dataclass(frozen=True)
class RunConfig:
    mechanism: BranchingMechanism
    sim: SimConfig
    harness: dict

    def to_dict(self) -> dict:
        return {
            "mechanism": mechanism_to_config(self.mechanism),
            "sim": sim_config_to_config(self.sim),
            "harness": self.harness,
        }


_NUMERIC_LISTS = ("levels", "lambdas", "dts", "residual_levels")
_SUB_BLOCKS = ("theorem1", "tanaka", "noise", "poisson", "reflected",
               "example", "exponent_check")


def _validate_harness(h: dict) -> dict:
    out = copy.deepcopy(DEFAULT_HARNESS)
    for key, val in h.items():
        if key not in DEFAULT_HARNESS:
            raise ConfigurationError(f"harness.{key}: unknown field")
        if key in _SUB_BLOCKS:
            if not isinstance(val, dict):
                raise ConfigurationError(f"harness.{key}: expected an object")
            for sub, sval in val.items():
                if sub not in DEFAULT_HARNESS[key] and sub != "f":
                    raise ConfigurationError(f"harness.{key}.{sub}: unknown field")
                out[key][sub] = sval
        else:
            out[key] = val
    for key in _NUMERIC_LISTS:
        try:
            out[key] = [float(v) for v in out[key]]
        except (TypeError, ValueError):
            raise ConfigurationError(f"harness.{key}: expected a list of numbers") from None
        if not out[key]:
            raise ConfigurationError(f"harness.{key}: must not be empty")
    for key in ("x", "mean_budget", "laplace_budget", "oracle_alpha_offset"):
        try:
            out[key] = float(out[key])
        except (TypeError, ValueError):
            raise ConfigurationError(f"harness.{key}: expected a number") from None
    try:
        out["paths"] = int(out["paths"])
    except (TypeError, ValueError):
        raise ConfigurationError("harness.paths: expected an integer") from None
    if out["paths"] <= 1:
        raise ConfigurationError("harness.paths: must exceed 1")
    if out["x"] < 0:
        raise ConfigurationError("harness.x: must be >= 0")
    for i, box in enumerate(out["boxes"]):
        for axis in ("a", "z", "u"):
            rng = box.get(axis)
            if (not isinstance(rng, (list, tuple)) or len(rng) != 2
                    or not all(isinstance(v, (int, float)) for v in rng)
                    or not rng[0] < rng[1]):
                raise ConfigurationError(
                    f"harness.boxes[{i}].{axis}: expected [lo, hi] with lo < hi")
    return out


def run_config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigurationError("config: expected a JSON object")
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for key in obj:
        if key not in merged:
            raise ConfigurationError(f"config.{key}: unknown field")
    merged.update({k: obj[k] for k in obj})
    mech = mechanism_from_config(merged["mechanism"])
    sim = sim_config_from_config(merged["sim"])
    harness = _validate_harness(merged.get("harness") or {})
    return RunConfig(mechanism=mech, sim=sim, harness=harness)


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return run_config_from_dict({})
    try:
        with open(path, "r", encoding="utf-8") as fp:
            text = fp.read()
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path}: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config: invalid JSON in {path}: {exc}") from None
    return run_config_from_dict(obj)
