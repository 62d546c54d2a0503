"""Experiment documents for the command-line runner.

Every document is strict: unknown fields are rejected so a config on disk
always says exactly what was run.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Literal, TypeVar, Union

from pydantic import (BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt,
                      field_validator)

from tools.gev_models import GevModel, GevModelDoc, ModelKind, default_model, model_from_doc
from tools.settings import OUT_DIR

logger = logging.getLogger(__name__)

ENV_ALIASES = {
    "adversarial": "adaptive_adversary",
    "adversary": "adaptive_adversary",
    "iid": "iid_stochastic",
    "stochastic": "iid_stochastic",
    "drift": "drift_sinusoid",
    "piecewise": "piecewise_constant",
    "replay": "replay_file",
}
ENV_KINDS = ("iid_stochastic", "adaptive_adversary", "drift_sinusoid",
             "piecewise_constant", "replay_file")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ================================================================
# 🧩 BUILDING BLOCKS
# ================================================================
class ModelShorthand(_Strict):
    """One of the canonical instances: {"kind": "nl", "n": 10, "lam": 0.5}."""

    kind: ModelKind
    n: PositiveInt
    lam: float = 0.5
    overlap: int = Field(default=1, ge=0)


ModelField = Union[ModelShorthand, GevModelDoc]


def build_model(spec: ModelField) -> GevModel:
    if isinstance(spec, ModelShorthand):
        return default_model(spec.kind, spec.n, spec.lam, spec.overlap)
    return model_from_doc(spec)


class LearnerConfig(_Strict):
    algorithm: Literal["ssa", "oftrl"] = "ssa"
    eta: Union[PositiveFloat, Literal["optimal"]] = "optimal"
    bound_variant: Literal["thm1", "thm2", "table"] = "thm2"
    recency_S: PositiveInt = 5
    variation_B: PositiveFloat = 0.02


class EnvConfig(_Strict):
    kind: str = "adaptive_adversary"
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("kind")
    @classmethod
    def _canonical_kind(cls, value: str) -> str:
        value = ENV_ALIASES.get(value, value)
        if value not in ENV_KINDS:
            raise ValueError(f"unknown environment kind; choose from {list(ENV_KINDS)}")
        return value


# ================================================================
# 📄 COMMAND DOCUMENTS
# ================================================================
class SimulateConfig(_Strict):
    model: ModelField = Field(default_factory=lambda: ModelShorthand(kind=ModelKind.MNL, n=10))
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)
    T: PositiveInt = 10_000
    u_max: PositiveFloat = 1.0
    seed: int = Field(default=0, ge=0)
    seeds: list[NonNegativeInt] | None = None  # sweep; each run goes to out/seed_<s>/T_<T>
    horizons: list[PositiveInt] | None = None
    out: str = OUT_DIR


class RandomGameConfig(_Strict):
    players: PositiveInt = 2
    strategies: PositiveInt = 2


class GameConfig(_Strict):
    builtin: Literal["matching_pennies", "rock_paper_scissors", "rps", "random"] | None = "rock_paper_scissors"
    game: dict[str, Any] | None = None  # a GameDoc, parsed by game_lab
    random: RandomGameConfig = Field(default_factory=RandomGameConfig)
    models: list[ModelField] | None = None  # one per player; MNL when omitted
    eta: Union[PositiveFloat, Literal["optimal"]] = "optimal"
    bound_variant: Literal["thm1", "thm2", "table"] = "thm2"
    T: PositiveInt = 10_000
    horizons: list[PositiveInt] = Field(default_factory=lambda: [100, 1000, 10_000])
    seed: int = Field(default=0, ge=0)
    seeds: list[NonNegativeInt] | None = None
    out: str = OUT_DIR


class VerifyConfig(_Strict):
    suites: list[str] = Field(
        default_factory=lambda: ["gradients", "montecarlo", "hessian", "bregman",
                                 "reductions", "fenchel"])
    models: list[str] = Field(default_factory=lambda: ["all"])
    n: int = Field(default=5, ge=2)
    lam: float = 0.5
    points: PositiveInt = 20
    samples: PositiveInt = 100_000
    rounds: PositiveInt = 1000
    seed: int = Field(default=0, ge=0)
    out: str = OUT_DIR


class BoundsConfig(_Strict):
    n: int = Field(default=10, ge=2)
    T: PositiveInt = 10_000
    u_max: PositiveFloat = 1.0
    lam: float = 0.5


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def load_config(path: str | Path | None, cls: type[ConfigT]) -> ConfigT:
    """Parse a JSON document, or the defaults when no path is given."""
    if path is None:
        return cls()
    config = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
    logger.info("loaded %s from %s", cls.__name__, path)
    return config


def _merge(base: dict, updates: dict) -> dict:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            value = _merge(merged[key], value)
        merged[key] = value
    return merged


def _drop_none(updates: dict) -> dict:
    cleaned = {}
    for key, value in updates.items():
        if isinstance(value, dict):
            value = _drop_none(value)
            if not value:
                continue
        if value is not None:
            cleaned[key] = value
    return cleaned


def with_overrides(config: ConfigT, **overrides: Any) -> ConfigT:
    """Re-validate `config` with every non-None override merged on top.

    Nested dicts merge key by key, so {"learner": {"eta": 2.0}} keeps the
    document's other learner fields.
    """
    updates = _drop_none(overrides)
    if not updates:
        return config
    return type(config).model_validate(_merge(config.model_dump(by_alias=True), updates))
