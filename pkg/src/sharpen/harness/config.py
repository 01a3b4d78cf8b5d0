"""Experiment configuration: one JSON document, strictly validated."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError

ALGORITHMS = ("sft", "ada-sft", "dpo", "xpo", "inference-bon")
INSTANCE_KINDS = ("random_tabular", "lower_bound_family", "softmax_separation", "maxcut_hardness",
                  "representational_example")


@dataclass
class Hyper:
    n: int = 100
    N: int = 4
    N_star: float | None = None
    mu_stop: float = 1.0
    beta: float = 0.1
    alpha: float = 0.0
    T: int = 50
    delta: float = 0.25
    gamma: float = 0.0
    epsilon: float = 0.2
    rho: float = 0.05
    reward: str = "log_likelihood"


@dataclass
class ExperimentConfig:
    algorithm: str
    instance: dict | None = None
    instance_file: str | None = None
    hyper: Hyper = field(default_factory=Hyper)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)


def _check_keys(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def _typed(name, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"{name} must be {kind.__name__}, got {value!r}")
    return value


def parse_config(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(d, [f.name for f in fields(ExperimentConfig)], "config")
    if "algorithm" not in d:
        raise ConfigError("config needs an algorithm")
    alg = d["algorithm"]
    if alg not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}, got {alg!r}")
    inst, inst_file = d.get("instance"), d.get("instance_file")
    if (inst is None) == (inst_file is None):
        raise ConfigError("give exactly one of instance or instance_file")
    if inst is not None:
        if not isinstance(inst, dict) or inst.get("kind") not in INSTANCE_KINDS:
            raise ConfigError(f"instance.kind must be one of {', '.join(INSTANCE_KINDS)}")
    h = d.get("hyper", {})
    if not isinstance(h, dict):
        raise ConfigError("hyper must be an object")
    _check_keys(h, [f.name for f in fields(Hyper)], "hyper")
    hyper = Hyper()
    for f in fields(Hyper):
        if f.name not in h:
            continue
        v = h[f.name]
        if f.name == "N_star":
            setattr(hyper, f.name, None if v is None else _typed(f.name, v, float))
        elif f.name == "reward":
            setattr(hyper, f.name, _typed(f.name, v, str))
        elif f.name in ("n", "N", "T"):
            setattr(hyper, f.name, _typed(f.name, v, int))
        else:
            setattr(hyper, f.name, _typed(f.name, v, float))
    if hyper.n < 1 or hyper.N < 1 or hyper.T < 1:
        raise ConfigError("n, N and T must be >= 1")
    if not hyper.beta > 0 or hyper.alpha < 0 or not hyper.mu_stop > 0:
        raise ConfigError("need beta > 0, alpha >= 0, mu_stop > 0")
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of nonnegative integers")
    out = os.environ.get("SHARPEN_OUTPUT_DIR") or d.get("output_dir", "out")
    return ExperimentConfig(alg, inst, inst_file, hyper, list(seeds), out)


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(d)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SHARPEN_THREADS", "1")))
    except ValueError:
        raise ConfigError("SHARPEN_THREADS must be an integer") from None
