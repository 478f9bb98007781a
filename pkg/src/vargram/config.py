"""Experiment configuration for the command-line runner."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, List, Optional

import numpy as np

from .errors import ConfigError
from .integrator import IrkConfig
from .models import SystemModel, load_model, read_document

KNOWN_KEYS = {
    "model", "x0", "perturbation_alpha", "horizon", "step_size", "eps", "budgets", "seed", "outputs",
    "empirical_max_states", "estimation_horizon", "guess_perturbation", "noise", "brute_force_max_subsets",
    "newton_tol", "workers", "estimate",
}


@dataclass
class ExperimentConfig:
    model_spec: Any  # "builtin:<name>", a path, or an inline model document
    x0: List[float]
    perturbation_alpha: float = 0.0
    horizon: int = 1000
    step_size: float = 1e-3
    eps: float = 1e-4
    budgets: List[int] = field(default_factory=list)
    seed: int = 0
    outputs: str = "vargram_out"
    empirical_max_states: int = 20
    estimation_horizon: Optional[int] = None
    guess_perturbation: float = 0.1
    noise: float = 0.0
    brute_force_max_subsets: int = 100_000
    newton_tol: float = 1e-10
    workers: int = 1
    estimate: bool = True
    base_dir: Optional[str] = None  # directory relative model paths resolve against

    def __post_init__(self):
        self.validate()

    def validate(self):
        def number(name, v, integer=False):
            if isinstance(v, str):
                # YAML 1.1 reads "1e-3" (no dot) as a string
                try:
                    v = float(v)
                except ValueError:
                    raise ConfigError(f"must be a number, got {v!r}", name) from None
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and int(v) != v):
                raise ConfigError(f"must be {'an integer' if integer else 'a number'}, got {v!r}", name)
            if not math.isfinite(v):
                raise ConfigError(f"must be finite, got {v!r}", name)
            return int(v) if integer else float(v)

        self.horizon = number("horizon", self.horizon, True)
        if self.horizon < 2:
            raise ConfigError(f"must be >= 2, got {self.horizon}", "horizon")
        self.eps = number("eps", self.eps)
        if not self.eps > 0:
            raise ConfigError(f"must be > 0, got {self.eps}", "eps")
        self.perturbation_alpha = number("perturbation_alpha", self.perturbation_alpha)
        if self.perturbation_alpha < 0:
            raise ConfigError(f"must be >= 0, got {self.perturbation_alpha}", "perturbation_alpha")
        self.step_size = number("step_size", self.step_size)
        if not self.step_size > 0:
            raise ConfigError(f"must be > 0, got {self.step_size}", "step_size")
        self.seed = number("seed", self.seed, True)
        self.empirical_max_states = number("empirical_max_states", self.empirical_max_states, True)
        self.guess_perturbation = number("guess_perturbation", self.guess_perturbation)
        self.noise = number("noise", self.noise)
        if self.noise < 0:
            raise ConfigError("must be >= 0", "noise")
        self.brute_force_max_subsets = number("brute_force_max_subsets", self.brute_force_max_subsets, True)
        self.newton_tol = number("newton_tol", self.newton_tol)
        self.workers = number("workers", self.workers, True)
        if self.workers < 1:
            raise ConfigError("must be >= 1", "workers")
        if self.estimation_horizon is not None:
            self.estimation_horizon = number("estimation_horizon", self.estimation_horizon, True)
            if self.estimation_horizon < 2:
                raise ConfigError("must be >= 2", "estimation_horizon")
        if not isinstance(self.budgets, list):
            raise ConfigError("must be a list of integers", "budgets")
        self.budgets = [number(f"budgets[{i}]", b, True) for i, b in enumerate(self.budgets)]
        if isinstance(self.x0, (int, float)) and not isinstance(self.x0, bool):
            pass  # scalar: broadcast once the model size is known
        elif isinstance(self.x0, str):
            self.x0 = number("x0", self.x0)
        elif isinstance(self.x0, list):
            self.x0 = [number(f"x0[{i}]", v) for i, v in enumerate(self.x0)]
        else:
            raise ConfigError("must be a list of numbers or a scalar", "x0")

    def irk(self) -> IrkConfig:
        return IrkConfig(self.step_size, newton_tol=self.newton_tol)

    def load_model(self) -> SystemModel:
        spec = self.model_spec
        if isinstance(spec, str) and not spec.startswith("builtin:") and self.base_dir:
            p = Path(spec)
            if not p.is_absolute():
                spec = str(Path(self.base_dir) / p)
        return load_model(spec)

    def initial_state(self, model: SystemModel) -> np.ndarray:
        """``x0 * (1 + alpha)``, with a scalar ``x0`` broadcast to ``n_x``."""
        if isinstance(self.x0, list):
            x0 = np.array(self.x0, dtype=float)
            if x0.shape != (model.n_x,):
                raise ConfigError(f"has {x0.size} entries, model has n_x={model.n_x}", "x0")
        else:
            x0 = np.full(model.n_x, float(self.x0))
        return x0 * (1.0 + self.perturbation_alpha)

    def check_budgets(self, model: SystemModel):
        for i, r in enumerate(self.budgets):
            if not 1 <= r <= model.n_y:
                raise ConfigError(f"budget {r} outside 1..{model.n_y}", f"budgets[{i}]")

    def to_doc(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d["model"] = d.pop("model_spec")
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.to_doc()
        d.pop("outputs")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def config_from_doc(doc, base_dir=None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(doc) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    for key in ("model", "x0"):
        if key not in doc:
            raise ConfigError("missing required field", key)
    kw = dict(doc)
    kw["model_spec"] = kw.pop("model")
    return ExperimentConfig(base_dir=base_dir, **kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_doc(read_document(path), base_dir=str(path.parent))
