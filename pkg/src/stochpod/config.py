"""Run configuration: parsing, validation, canonical hashing.

Configs are JSON documents.  Validation errors carry the offending field
path so the CLI can emit a precise diagnostic (exit code 2).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .training import RefinementConfig, TrainingConfig


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"config field '{field_path}': {message}")
        self.field_path = field_path


PROBLEM_KINDS = ("cubic-parametric", "linear-static-experiment", "surrogate-dynamics")


@dataclass(frozen=True)
class PodConfig:
    k: int | None = None
    energy_threshold: float | None = None
    source: str | None = None   # "centered" | "raw"; default depends on problem


@dataclass(frozen=True)
class EnsembleConfig:
    count: int
    level: float
    seed: int


@dataclass(frozen=True)
class RunConfig:
    problem: dict
    pod: PodConfig
    training: dict
    ensemble: EnsembleConfig
    output_dir: str | None = None

    @property
    def seed(self) -> int:
        return self.ensemble.seed

    def canonical_dict(self) -> dict:
        return {
            "problem": self.problem,
            "pod": {k: v for k, v in asdict(self.pod).items() if v is not None},
            "training": self.training,
            "ensemble": asdict(self.ensemble),
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def training_config(self, k: int, rank: int) -> TrainingConfig:
        t = self.training
        beta_max = t.get("beta_max")
        if beta_max is None:
            beta_max = 10.0 * rank
        ref = t.get("refinement", {})
        return TrainingConfig(
            beta_bounds=(float(k), float(beta_max)),
            mc_samples=int(t.get("mc_samples", 1000)),
            tolerance=float(t.get("tolerance", 1e-3)),
            max_iter=int(t.get("max_iter", 100)),
            refinement=RefinementConfig(
                enabled=bool(ref.get("enabled", False)),
                window=float(ref.get("window", 1.0)),
                mc_samples=int(ref.get("mc_samples", 100_000)),
                tolerance=float(ref.get("tolerance", 1e-10)),
                max_iter=int(ref.get("max_iter", 100)),
            ),
            parametric_aggregation=t.get("parametric_aggregation", "per-parameter"),
        )


def _require(condition: bool, field_path: str, message: str) -> None:
    if not condition:
        raise ConfigError(field_path, message)


def parse_config(document: dict, seed_override: int | None = None,
                 output_override: str | None = None) -> RunConfig:
    _require(isinstance(document, dict), "", "top level must be a JSON object")
    for key in ("problem", "pod", "ensemble"):
        _require(key in document, key, "missing required section")

    problem = dict(document["problem"])
    kind = problem.get("kind")
    _require(kind in PROBLEM_KINDS, "problem.kind",
             f"must be one of {', '.join(PROBLEM_KINDS)}")
    _require(isinstance(problem.get("n"), int) and problem["n"] >= 8,
             "problem.n", "must be an integer >= 8")
    if kind == "cubic-parametric":
        _require(problem.get("alpha", 0) > 0, "problem.alpha", "must be positive")
        _require(int(problem.get("snapshot_count", 0)) >= 2,
                 "problem.snapshot_count", "must be >= 2")
        mu = problem.get("mu_test")
        _require(isinstance(mu, list) and len(mu) == 5,
                 "problem.mu_test", "must be a list of 5 numbers")
    elif kind == "linear-static-experiment":
        _require(0 <= problem.get("perturbation_ratio", 0.15),
                 "problem.perturbation_ratio", "must be nonnegative")
        _require(0 <= problem.get("noise_level", 0.05),
                 "problem.noise_level", "must be nonnegative")
        _require(int(problem.get("sensor_count", 19)) >= 1,
                 "problem.sensor_count", "must be >= 1")
        _require(int(problem.get("snapshot_count", 100)) >= 2,
                 "problem.snapshot_count", "must be >= 2")
        _require(problem.get("snapshot_force", "nominal") in ("nominal", "perturbed"),
                 "problem.snapshot_force", "must be 'nominal' or 'perturbed'")
    else:  # surrogate-dynamics
        _require(problem.get("dt", 0) > 0, "problem.dt", "must be positive")
        _require(problem.get("t_end", 0) > 0, "problem.t_end", "must be positive")
        _require(isinstance(problem.get("qoi_dof"), int),
                 "problem.qoi_dof", "must be an integer DoF index")
        _require(int(problem.get("snapshot_stride", 1)) >= 1,
                 "problem.snapshot_stride", "must be >= 1")

    pod_doc = document["pod"]
    k = pod_doc.get("k")
    tau = pod_doc.get("energy_threshold")
    _require((k is None) != (tau is None), "pod",
             "exactly one of 'k' or 'energy_threshold' must be set")
    if k is not None:
        _require(isinstance(k, int) and k >= 1, "pod.k", "must be an integer >= 1")
    if tau is not None:
        _require(0.0 < tau < 1.0, "pod.energy_threshold", "must lie in (0, 1)")
    source = pod_doc.get("source")
    _require(source in (None, "centered", "raw"), "pod.source",
             "must be 'centered' or 'raw'")

    ens = document["ensemble"]
    _require(isinstance(ens.get("count"), int) and ens["count"] >= 2,
             "ensemble.count", "must be an integer >= 2")
    _require(0.0 < ens.get("level", 0.95) < 1.0, "ensemble.level", "must lie in (0, 1)")
    seed = seed_override if seed_override is not None else ens.get("seed")
    _require(isinstance(seed, int), "ensemble.seed", "a mandatory integer seed")

    training = dict(document.get("training", {}))
    agg = training.get("parametric_aggregation", "per-parameter")
    _require(agg in ("per-parameter", "pooled"), "training.parametric_aggregation",
             "must be 'per-parameter' or 'pooled'")

    output_dir = output_override if output_override is not None else document.get("output_dir")
    return RunConfig(
        problem=problem,
        pod=PodConfig(k=k, energy_threshold=tau, source=source),
        training=training,
        ensemble=EnsembleConfig(count=int(ens["count"]),
                                level=float(ens.get("level", 0.95)),
                                seed=int(seed)),
        output_dir=output_dir,
    )


def load_config(path, seed_override: int | None = None,
                output_override: str | None = None) -> RunConfig:
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                              f"{exc.msg}") from exc
    return parse_config(document, seed_override, output_override)
