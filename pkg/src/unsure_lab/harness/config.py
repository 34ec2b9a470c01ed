"""Experiment configuration: one JSON document plus dotted-path overrides."""
from __future__ import annotations

import copy
import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ConfigError
from ..models import PRIORS, noise_from_dict

EXPERIMENTS = ("oracle_table", "zed_risk_sweep", "solver_suite", "train_denoiser", "train_score_plugin",
               "inverse_demo")

# per-experiment defaults; a user config only needs to name the experiment and a seed
DEFAULTS: dict[str, dict[str, Any]] = {
    "oracle_table": {
        "priors": ["two_deltas", "gaussian", "spike_slab"],
        "noise": {"variant": "isotropic", "sigma": 0.25},
        "mc_samples": 100000,
        "tolerance": 0.10,
    },
    "zed_risk_sweep": {
        "priors": ["two_deltas", "gaussian", "spike_slab"],
        "sigmas": [0.05, 0.1, 0.25, 0.5],
        "mc_samples": 100000,
        "tolerance": 0.03,
    },
    "solver_suite": {
        "trials": 3,
        "tolerance": 1e-6,
        "circulant_tolerance": 1e-10,
    },
    "train_denoiser": {
        "prior": "two_deltas",
        "noise": {"variant": "isotropic", "sigma": 0.25},
        "n": 16,
        "train_samples": 2000,
        "test_samples": 2000,
        "epochs": 200,
        "alpha": 1e-3,
        "mu": 0.9,
        "lr": 5e-4,
        "batch_size": 32,
        "hidden": [64, 64],
        "pixelwise": True,
        "eta_tolerance": 0.20,
        "mse_factor": 1.5,
    },
    "train_score_plugin": {
        "prior": "gaussian",
        "noise": {"variant": "isotropic", "sigma": 0.25},
        "n": 1,
        "train_samples": 20000,
        "test_samples": 5000,
        "epochs": 100,
        "lr": 3e-3,
        "batch_size": 128,
        "hidden": [64, 64],
        "delta_max": 0.1,
        "delta_min": 0.01,
        "slope_tolerance": 0.10,
        "norm_ratio_max": 0.15,
        "mse_tolerance": 0.15,
    },
    "inverse_demo": {
        "n": 12,
        "kept": [0, 1, 2, 4, 5, 7, 8, 10, 11],
        "samples": 64,
        "tolerance": 1e-8,
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    params: dict = field(default_factory=dict)
    out: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed must be an integer")
        self.seed = int(self.seed)
        merged = copy.deepcopy(DEFAULTS[self.experiment])
        _deep_update(merged, self.params)
        self.params = merged
        self._validate()

    def _validate(self):
        p = self.params
        for key in ("prior",):
            if key in p and p[key] not in PRIORS:
                raise ConfigError(f"unknown prior {p[key]!r}")
        for name in p.get("priors", []):
            if name not in PRIORS:
                raise ConfigError(f"unknown prior {name!r}")
        if "noise" in p:
            noise_from_dict(p["noise"])

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "params": self.params, "out": self.out}

    def canonical_json(self) -> str:
        # the output directory does not change results, so it stays out of the run id
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def run_id(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    def stream_seed(self, label: str = "") -> int:
        """Seed of the RNG stream owned by ``(master seed, experiment, label)``."""
        key = zlib.crc32(f"{self.experiment}/{label}".encode())
        return int(np.random.SeedSequence([self.seed, key]).generate_state(1)[0])

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' field")
        if "seed" not in d:
            raise ConfigError("config needs a 'seed' field")
        extra = set(d) - {"experiment", "seed", "params", "out"}
        if extra:
            raise ConfigError(f"unknown top-level config fields {sorted(extra)}")
        return cls(d["experiment"], d["seed"], dict(d.get("params", {})), d.get("out", "out"))


def _deep_update(base: dict, upd: dict) -> None:
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, sets: list[str]) -> dict:
    """Apply ``key.path=value`` assignments to a raw config dict.

    Paths that do not start with a top-level field are taken relative to
    ``params``, so ``noise.sigma=0.3`` and ``params.noise.sigma=0.3`` are the same.
    """
    d = copy.deepcopy(d)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"empty override key in {item!r}")
        if parts[0] not in ("experiment", "seed", "params", "out"):
            parts = ["params"] + parts
        node = d
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = nxt
        node[parts[-1]] = parse_value(raw)
    return d


def load_config(path: str, sets: list[str] | None = None, env: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return build_config(raw, sets, env)


def build_config(raw: dict, sets: list[str] | None = None, env: dict | None = None) -> ExperimentConfig:
    raw = apply_overrides(raw, sets or [])
    env = os.environ if env is None else env
    if env.get("UNSURE_SEED") not in (None, ""):
        try:
            raw["seed"] = int(env["UNSURE_SEED"])
        except ValueError as exc:
            raise ConfigError("UNSURE_SEED must be an integer") from exc
    return ExperimentConfig.from_dict(raw)
