"""Experiment configuration: YAML round-trip and environment assembly.

A configuration bundles the market model, the hedging instruments, the
trading calendar, the training hyper-parameters, the risk-aversion grid,
and the out-of-sample evaluation settings. Scenario presets shipped with
the package (see ``available_presets``) reproduce the published
parameter tables at desk-scale iteration counts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import yaml

from .book_env import BookEnv
from .errors import InconsistentInputError
from .market_sim import MarketParams, TimeGrid, build_grid
from .pricing import CdsSpec
from .trvo import TrvoConfig, config_from_dict

__all__ = ["ExperimentConfig", "available_presets", "load_config",
           "save_config", "resolve_config_path"]


@dataclass
class ExperimentConfig:
    """Everything needed to run one scenario end to end."""

    market: MarketParams
    cds: tuple[CdsSpec, ...]
    train: TrvoConfig
    betas: tuple[float, ...] = (500.0,)
    grid_days: int = 90
    steps_per_day: int = 5
    eval_episodes: int = 2000
    eval_seed: int = 1000003
    quadratic_impact: float = 0.0
    out_dir: str = "out"
    name: str = ""

    def validate(self) -> None:
        self.market.validate()
        self.train.validate()
        if not self.cds:
            raise InconsistentInputError("at least one CDS is required")
        if any(b < 0 or not (b == b) for b in self.betas):
            raise InconsistentInputError("betas must be finite and >= 0")
        if self.eval_seed == self.train.seed:
            raise InconsistentInputError(
                "evaluation seed must differ from the training seed")
        if self.eval_episodes < 2:
            raise InconsistentInputError("need at least two eval episodes")
        if self.grid_days < 1 or self.steps_per_day < 1:
            raise InconsistentInputError("grid needs >= 1 day and >= 1 step")

    def build_grid(self) -> TimeGrid:
        return build_grid(self.grid_days, self.steps_per_day)

    def build_env(self) -> BookEnv:
        return BookEnv(self.market, self.build_grid(), self.cds,
                       quadratic_impact=self.quadratic_impact)


def config_to_dict(config: ExperimentConfig) -> dict:
    train = dataclasses.asdict(config.train)
    train["hidden"] = list(config.train.hidden)
    return {
        "name": config.name,
        "market": dataclasses.asdict(config.market),
        "cds": [dataclasses.asdict(s) for s in config.cds],
        "grid": {"days": config.grid_days,
                 "steps_per_day": config.steps_per_day},
        "betas": list(config.betas),
        "train": train,
        "evaluation": {"episodes": config.eval_episodes,
                       "seed": config.eval_seed},
        "quadratic_impact": config.quadratic_impact,
        "out_dir": config.out_dir,
    }


def _market_from_dict(values: dict) -> MarketParams:
    names = {f.name for f in dataclasses.fields(MarketParams)}
    unknown = set(values) - names
    if unknown:
        raise InconsistentInputError(
            f"unknown market parameters: {sorted(unknown)}")
    return MarketParams(**values)


def config_from_mapping(data: dict) -> ExperimentConfig:
    known = {"name", "market", "cds", "grid", "betas", "train",
             "evaluation", "quadratic_impact", "out_dir"}
    unknown = set(data) - known
    if unknown:
        raise InconsistentInputError(
            f"unknown configuration sections: {sorted(unknown)}")
    market = _market_from_dict(data.get("market", {}))
    cds_entries = data.get("cds", [])
    cds = tuple(CdsSpec(maturity=float(e["maturity"]),
                        coupon=float(e["coupon"])) for e in cds_entries)
    train_dict = dict(data.get("train", {}))
    if "hidden" in train_dict:
        train_dict["hidden"] = tuple(train_dict["hidden"])
    train = config_from_dict(train_dict)
    grid = data.get("grid", {})
    evaluation = data.get("evaluation", {})
    config = ExperimentConfig(
        market=market, cds=cds, train=train,
        betas=tuple(float(b) for b in data.get("betas", (500.0,))),
        grid_days=int(grid.get("days", 90)),
        steps_per_day=int(grid.get("steps_per_day", 5)),
        eval_episodes=int(evaluation.get("episodes", 2000)),
        eval_seed=int(evaluation.get("seed", 1000003)),
        quadratic_impact=float(data.get("quadratic_impact", 0.0)),
        out_dir=str(data.get("out_dir", "out")),
        name=str(data.get("name", "")))
    config.validate()
    return config


def available_presets() -> list[str]:
    root = importlib.resources.files("cvahedge") / "presets"
    return sorted(p.name[:-len(".yaml")] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def resolve_config_path(spec: str) -> Path:
    """Accept either a filesystem path or a bundled preset name."""
    path = Path(spec)
    if path.exists():
        return path
    preset = importlib.resources.files("cvahedge") / "presets" / f"{spec}.yaml"
    with importlib.resources.as_file(preset) as concrete:
        if concrete.exists():
            return concrete
    raise InconsistentInputError(
        f"config {spec!r} is neither a file nor one of the presets "
        f"{available_presets()}")


def load_config(spec: str | Path) -> ExperimentConfig:
    path = resolve_config_path(str(spec))
    with open(path) as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise InconsistentInputError(f"config {path} is not a mapping")
    return config_from_mapping(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=True)


def config_hash(config: ExperimentConfig) -> str:
    """Stable fingerprint of a configuration (checkpoint provenance)."""
    text = yaml.safe_dump(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
