"""Experiment configuration: defaults, JSON file, command-line overrides.

Precedence, lowest first: built-in defaults, the ``--config`` file, flags.
The merged document is validated against ``config_schema.json`` before any
work starts.
"""

from __future__ import annotations

import copy
import json
import math
from functools import lru_cache
from importlib import resources

import jsonschema

from .errors import ValidationError

EXPERIMENTS = ("quad", "lambda", "couple", "flow", "validate-harmonic")

DEFAULTS = {
    "common": {"seed": 0, "threads": 1, "output_dir": "out"},
    "quad": {"tol": 1e-8, "quad": {}},
    "lambda": {"rho": "inf", "delta": 1e-3, "dt": None, "N": 10**6, "lambda": {"far_radius": 64.0}},
    "couple": {"rho": 8.0, "dt": 1e-4, "b": 5.0, "eps": 1e-4, "N": 200,
               "couple": {"mode": "ladder", "K": 1, "c4": 1.0, "monitor_every": 0}},
    "flow": {"rho": 4.0, "dt": 1e-3, "flow": {"n_per_axis": 12, "n_bins": 6,
                                              "snapshot_times": [0, 1, 2, 4, 8, 16, 32, 64, 128],
                                              "pair_T": 1e5, "pair_separation": 0.1, "burn_in": 0.5}},
    "validate-harmonic": {"delta": 1e-3, "dt": None, "N": 10**5,
                          "validate-harmonic": {"eps_cut": 0.05, "level": 0.01, "far_radius": 64.0}},
}


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("rbm_lab").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(file_cfg: dict | None, overrides: dict) -> dict:
    """Merge defaults, file values and overrides; validate the result."""
    file_cfg = file_cfg or {}
    name = overrides.get("experiment") or file_cfg.get("experiment")
    if name is None:
        raise ValidationError("no experiment given")
    if name not in EXPERIMENTS:
        raise UnknownExperiment(name)
    cfg = _merge(DEFAULTS["common"], DEFAULTS[name])
    cfg = _merge(cfg, file_cfg)
    cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    cfg["experiment"] = name
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {path}: {exc.message}") from None


def rho_value(cfg: dict) -> float:
    r = cfg.get("rho", "inf")
    return math.inf if r == "inf" else float(r)


class UnknownExperiment(ValidationError):
    def __init__(self, name):
        super().__init__(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
