"""Experiment configuration: a YAML document with strict validation."""

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml

from slpmm.core import SolverConfig

FAMILY_DEFAULTS = {
    "qcqp": {"n": 20, "p": 3, "radius": 2.0, "data_seed": 0},
    "np": {"n": 50, "n_pos": 2000, "n_neg": 2000, "separation": 1.0, "tau": 1.0,
           "radius": 10.0, "batch_fraction": 0.01, "data_seed": 0, "path": None,
           "label_map": None},
    "ssd": {"n": 10, "scenarios": 500, "level_count": 50, "upper": 1.0, "data_seed": 0,
            "path": None, "batch": 1},
}

SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolverConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    family: str
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    validation_samples: object = 100000
    output: str = "out"
    workers: int = 1
    deterministic_time: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.family not in FAMILY_DEFAULTS:
            raise ConfigError(f"unknown family {self.family!r}; "
                              f"choose from {sorted(FAMILY_DEFAULTS)}")
        unknown = set(self.problem) - set(FAMILY_DEFAULTS[self.family])
        if unknown:
            raise ConfigError(f"unknown problem keys for {self.family}: {sorted(unknown)}")
        unknown = set(self.solver) - SOLVER_FIELDS
        if unknown:
            raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
        if "iterations" not in self.solver:
            raise ConfigError("solver.iterations is required")
        if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool)
                                     for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        vs = self.validation_samples
        if not (vs == "full" or (isinstance(vs, int) and not isinstance(vs, bool) and vs >= 2)):
            raise ConfigError("validation_samples must be an integer >= 2 or 'full'")
        if vs == "full" and self.family == "qcqp":
            raise ConfigError("the qcqp family has no finite scenario set; "
                              "validation_samples cannot be 'full'")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        try:
            self.solver_config(self.seeds[0])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver section: {exc}") from None

    def problem_params(self):
        params = dict(FAMILY_DEFAULTS[self.family])
        params.update(self.problem)
        return params

    def solver_config(self, seed):
        return SolverConfig(seed=seed, **self.solver)

    def to_dict(self):
        return {
            "family": self.family,
            "problem": dict(self.problem),
            "solver": dict(self.solver),
            "seeds": list(self.seeds),
            "validation_samples": self.validation_samples,
            "output": self.output,
            "workers": self.workers,
            "deterministic_time": self.deterministic_time,
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        if "family" not in d:
            raise ConfigError("missing required key 'family'")
        for key in ("problem", "solver"):
            if key in d and not isinstance(d[key] or {}, dict):
                raise ConfigError(f"{key} must be a mapping")
        kwargs = dict(d)
        kwargs["problem"] = dict(d.get("problem") or {})
        kwargs["solver"] = dict(d.get("solver") or {})
        return cls(**kwargs)

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text):
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    def with_overrides(self, seeds: Optional[list] = None, output: Optional[str] = None,
                       family: Optional[str] = None, deterministic_time: Optional[bool] = None,
                       iterations: Optional[int] = None):
        d = self.to_dict()
        if family is not None and family != self.family:
            d["family"] = family
            d["problem"] = {}
        if seeds is not None:
            d["seeds"] = list(seeds)
        if output is not None:
            d["output"] = output
        if deterministic_time is not None:
            d["deterministic_time"] = deterministic_time
        if iterations is not None:
            d["solver"]["iterations"] = iterations
        return ExperimentConfig.from_dict(d)
