"""Experiment configuration (JSON).

Schema, every key optional::

    {
      "distribution": {"type": "potts", "K": 10, "L": 100, "J": 2.0}
                    | {"type": "tabular", "path": "table.json"},
      "predictor":    {"type": "optimal"} | {"type": "perturbed", "alpha": 0.1},
      "schedule":     {"type": "balanced", "T": 10}
                    | {"type": "explicit", "sizes": [4, 2, 2]}
                    | {"type": "lower-bound", "s_max": 4},
      "policy":       "uniform" | "entropy-adaptive",
      "n_samples":    200000,
      "seed":         0,
      "output":       null,
      "T_list":       [2, 4, 5, 10, 20, 25, 50],
      "J_list":       [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
    }

Relative tabular paths resolve against the config file's directory.  The
seed is taken from ``--seed`` first, then ``MASKDIFF_SEED``, then the file.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, InvalidArgument
from .montecarlo import SEED_MAX
from .oracle import PottsChain, TabularDistribution
from .predictor import MaskPredictor
from .sampler import UnmaskPolicy
from .schedule import MaskSchedule, RandomLowerBoundSchedule, balanced_schedule, validate_schedule

SEED_ENV = "MASKDIFF_SEED"

DEFAULTS = {
    "distribution": {"type": "potts", "K": 10, "L": 100, "J": 2.0},
    "predictor": {"type": "optimal"},
    "schedule": {"type": "balanced", "T": 10},
    "policy": "uniform",
    "n_samples": 200_000,
    "seed": 0,
    "output": None,
    "T_list": [2, 4, 5, 10, 20, 25, 50],
    "J_list": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
}

_KNOWN = set(DEFAULTS)


def parse_seed(value) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {value!r}") from None
    if isinstance(value, float) and value != seed:
        raise ConfigError(f"seed must be an integer, got {value!r}")
    if not 0 <= seed <= SEED_MAX:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: dict = field(default_factory=lambda: dict(DEFAULTS["distribution"]))
    predictor: dict = field(default_factory=lambda: dict(DEFAULTS["predictor"]))
    schedule: dict = field(default_factory=lambda: dict(DEFAULTS["schedule"]))
    policy: str = "uniform"
    n_samples: int = 200_000
    seed: int = 0
    output: str | None = None
    T_list: tuple = tuple(DEFAULTS["T_list"])
    J_list: tuple = tuple(DEFAULTS["J_list"])
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - _KNOWN
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = copy.deepcopy(DEFAULTS)
        merged.update(raw)
        for key in ("distribution", "predictor", "schedule"):
            if not isinstance(merged[key], dict):
                raise ConfigError(f"{key} must be an object")
        try:
            policy = UnmaskPolicy(merged["policy"]).value
        except ValueError:
            raise ConfigError(f"unknown policy {merged['policy']!r}") from None
        n = merged["n_samples"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 2:
            raise ConfigError(f"n_samples must be an integer >= 2, got {n!r}")
        for key in ("T_list", "J_list"):
            if not isinstance(merged[key], list) or not merged[key]:
                raise ConfigError(f"{key} must be a nonempty list")
        cfg = cls(
            distribution=merged["distribution"],
            predictor=merged["predictor"],
            schedule=merged["schedule"],
            policy=policy,
            n_samples=n,
            seed=parse_seed(merged["seed"]),
            output=merged["output"],
            T_list=tuple(merged["T_list"]),
            J_list=tuple(merged["J_list"]),
            base_dir=str(base_dir),
        )
        # build once so that errors surface at load time
        d = cfg.build_distribution()
        cfg.build_predictor(d)
        cfg.build_schedule(d.L)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw, path.parent)

    def with_seed_overrides(self, cli_seed=None, env=None) -> "ExperimentConfig":
        env = os.environ if env is None else env
        if cli_seed is not None:
            return replace(self, seed=parse_seed(cli_seed))
        if env.get(SEED_ENV):
            return replace(self, seed=parse_seed(env[SEED_ENV]))
        return self

    def with_J(self, J: float) -> "ExperimentConfig":
        if self.distribution.get("type") != "potts":
            raise ConfigError("a J sweep needs a potts distribution")
        return replace(self, distribution={**self.distribution, "J": float(J)})

    def with_schedule(self, spec: dict) -> "ExperimentConfig":
        return replace(self, schedule=dict(spec))

    def build_distribution(self):
        spec = self.distribution
        kind = spec.get("type")
        try:
            if kind == "potts":
                return PottsChain(int(spec["K"]), int(spec["L"]), float(spec["J"]))
            if kind == "tabular":
                path = Path(spec["path"])
                if not path.is_absolute():
                    path = Path(self.base_dir) / path
                if not path.exists():
                    raise ConfigError(f"tabular file not found: {path}")
                return TabularDistribution.load(path)
        except KeyError as exc:
            raise ConfigError(f"distribution spec missing {exc}") from None
        except (InvalidArgument, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad distribution spec {spec}: {exc}") from None
        raise ConfigError(f"unknown distribution type {kind!r}")

    def build_predictor(self, d) -> MaskPredictor:
        try:
            return MaskPredictor.from_spec(self.predictor, d)
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from None

    def build_schedule(self, L: int):
        spec = self.schedule
        kind = spec.get("type")
        try:
            if kind == "balanced":
                return balanced_schedule(L, int(spec["T"]))
            if kind == "explicit":
                return validate_schedule([int(s) for s in spec["sizes"]], L)
            if kind == "lower-bound":
                return RandomLowerBoundSchedule(L, int(spec["s_max"]))
        except KeyError as exc:
            raise ConfigError(f"schedule spec missing {exc}") from None
        except (InvalidArgument, TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule spec {spec}: {exc}") from None
        raise ConfigError(f"unknown schedule type {kind!r}")

    def to_dict(self) -> dict:
        return {
            "distribution": self.distribution,
            "predictor": self.predictor,
            "schedule": self.schedule,
            "policy": self.policy,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "output": self.output,
            "T_list": list(self.T_list),
            "J_list": list(self.J_list),
        }


def is_fixed(schedule) -> bool:
    return isinstance(schedule, MaskSchedule)
