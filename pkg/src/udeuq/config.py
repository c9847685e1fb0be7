"""Declarative run configuration (one JSON document per run)."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from udeuq.core import CATALOG, SCENARIOS
from udeuq.errors import ConfigError
from udeuq.likelihood import NoiseModel
from udeuq.optimize import FitConfig
from udeuq.solve import TRAINING_SOLVER, SolverConfig

OUTPUT_ROOT_ENV = "UDEUQ_OUTPUT_ROOT"
METHODS = ("ensemble", "nuts", "pt", "vi")


def _build(cls, d: dict | None):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class WarmStartBlock:
    adam_epochs: int = 1000
    qn_max_iters: int = 200

    def fit_config(self, seed: int) -> FitConfig:
        return FitConfig(adam_epochs=self.adam_epochs, qn_max_iters=self.qn_max_iters, seed=seed)


@dataclass(frozen=True)
class EnsembleBlock:
    m: int = 100
    alpha: float = 0.05
    df: float = 1
    adam_epochs: int = 4000
    adam_lr: float = 1e-3
    qn_max_iters: int = 1000
    l2_penalty: float = 1e-5
    val_fraction: float = 0.2
    # An all-zero tanh network is a fixed point of every gradient method (only
    # the output bias ever moves), so experiment runs start from Glorot draws.
    net_init: str = "glorot_uniform"

    def fit_config(self, seed: int) -> FitConfig:
        return FitConfig(self.adam_epochs, self.adam_lr, self.qn_max_iters, self.l2_penalty, self.val_fraction, seed)


@dataclass(frozen=True)
class NutsBlock:
    n_samples: int = 2000
    n_warmup: int = 1000
    max_depth: int = 10
    target_accept: float = 0.8
    warm_start: WarmStartBlock = field(default_factory=WarmStartBlock)


@dataclass(frozen=True)
class PtBlock:
    n_samples: int = 2000
    n_warmup: int = 1000
    temperatures: tuple = ()
    max_depth: int = 10
    target_accept: float = 0.8
    warm_start: WarmStartBlock = field(default_factory=WarmStartBlock)


@dataclass(frozen=True)
class ViBlock:
    steps: int = 2000
    n_mc: int = 5
    lr: float = 1e-2
    init_log_sigma: float = -2.0
    average_tail: float = 0.2
    n_draws: int = 1000
    warm_start: WarmStartBlock = field(default_factory=WarmStartBlock)


@dataclass(frozen=True)
class ReportBlock:
    grid_points: int = 200
    levels: tuple = (0.5, 0.8, 0.99)
    noise_draws: int = 20
    x0_override: tuple | None = None
    max_draws: int = 2000
    svg: bool = True


_BLOCKS = {"ensemble": EnsembleBlock, "nuts": NutsBlock, "pt": PtBlock, "vi": ViBlock}


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    noise: NoiseModel
    method: str = "ensemble"
    seed: int = 0
    params: object = None  # the block matching ``method``
    solver: SolverConfig = TRAINING_SOLVER
    parallelism: int = 1
    output_dir: str = ""
    report: ReportBlock = field(default_factory=ReportBlock)
    custom: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        allowed = CATALOG[self.scenario]
        if self.noise.kind not in allowed:
            raise ConfigError(f"{self.scenario} has no {self.noise.kind} noise scenario")
        if self.noise.value not in allowed[self.noise.kind] and not self.custom:
            raise ConfigError(
                f"noise parameter {self.noise.value} is not in the catalog {allowed[self.noise.kind]}; set custom=true to allow it"
            )
        if self.params is None:
            object.__setattr__(self, "params", _BLOCKS[self.method]())
        if not isinstance(self.params, _BLOCKS[self.method]):
            raise ConfigError(f"method block does not match method {self.method!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def output_path(self) -> Path:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
        if not self.output_dir:
            return root / f"{self.scenario}_{self.noise.kind}_{self.noise.value:g}_seed{self.seed}"
        p = Path(self.output_dir)
        return p if p.is_absolute() else root / p

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario,
            "noise": self.noise.to_dict(),
            "method": self.method,
            "seed": self.seed,
            self.method: _jsonable(asdict(self.params)),
            "solver": self.solver.to_dict(),
            "parallelism": self.parallelism,
            "output_dir": self.output_dir,
            "report": _jsonable(asdict(self.report)),
            "custom": self.custom,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        method = d.pop("method", "ensemble")
        present = [m for m in METHODS if m in d]
        if len(present) > 1 or (present and present[0] != method):
            raise ConfigError(f"exactly one method block matching {method!r} is allowed; found {present}")
        block = d.pop(method, None)
        params = _build_block(method, block)
        try:
            noise = NoiseModel.from_dict(d.pop("noise"))
            scenario = d.pop("scenario")
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc}") from exc
        solver = _build(SolverConfig, d.pop("solver")) if "solver" in d else TRAINING_SOLVER
        report = _build(ReportBlock, _tuples(d.pop("report", None), ("levels", "x0_override")))
        allowed = {"seed", "parallelism", "output_dir", "custom"}
        if set(d) - allowed:
            raise ConfigError(f"unknown config keys {sorted(set(d) - allowed)}")
        return cls(scenario, noise, method, params=params, solver=solver, report=report, **d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            return cls.from_dict(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc


def _tuples(d: dict | None, keys) -> dict | None:
    if d is None:
        return None
    d = dict(d)
    for k in keys:
        if d.get(k) is not None:
            d[k] = tuple(d[k])
    return d


def _build_block(method: str, block: dict | None):
    block = dict(block or {})
    if method in ("nuts", "pt", "vi") and "warm_start" in block:
        block["warm_start"] = _build(WarmStartBlock, block["warm_start"])
    if method == "pt":
        block = _tuples(block, ("temperatures",))
    return _build(_BLOCKS[method], block)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj
