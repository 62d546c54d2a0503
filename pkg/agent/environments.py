"""Payoff environments, the online decision loop and regret accounting.

Regret after T rounds is max_j theta_jT - sum_t <u_t, x_t>. The driver commits
x_t before asking the environment for u_t, so an adaptive adversary sees
x_1..x_t but never x_{t+1}.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Protocol, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from tools import seeds
from tools.errors import BoundViolationError, DimensionError, MismatchError, SpecError
from tools.gev_models import GevModel, ModelKind, default_model
from agent.learners import (BoundVariant, OftrlState, bound_at_eta, oftrl_eta,
                            oftrl_error_bound, optimal_eta, recency_variation)

logger = logging.getLogger(__name__)

EnvKind = Literal["iid_stochastic", "adaptive_adversary", "drift_sinusoid",
                  "piecewise_constant", "replay_file"]


class Learner(Protocol):
    model: GevModel
    eta: float
    u_max: float
    current_x: np.ndarray

    def step(self, u) -> tuple[float, np.ndarray]: ...


# ================================================================
# 🌦️ ENVIRONMENTS
# ================================================================
def adaptive_adversary_step(history: Sequence[np.ndarray], u_max: float = 1.0) -> np.ndarray:
    """Pay u_max to the least likely alternative of the latest distribution."""
    x_t = np.asarray(history[-1])
    u = np.zeros(x_t.shape[0])
    u[int(np.argmin(x_t))] = u_max
    return u


@dataclass
class Environment:
    """Base payoff source. `payoff(t, history)` may read history = (x_1, .., x_t)."""

    n: int
    u_max: float = 1.0
    seed: int = 0
    kind: EnvKind = field(init=False, default="iid_stochastic")
    rng: np.random.Generator = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.n < 1:
            raise SpecError(f"an environment needs at least one alternative, got {self.n}")
        if not self.u_max > 0:
            raise SpecError(f"u_max must be positive, got {self.u_max!r}")
        self.reset(self.seed)

    def reset(self, seed: int) -> None:
        self.seed = seed
        self.rng = seeds.stream(seed, "environment")

    def payoff(self, t: int, history: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def emit(self, t: int, history: Sequence[np.ndarray]) -> np.ndarray:
        u = np.asarray(self.payoff(t, history), dtype=np.float64)
        if u.shape != (self.n,):
            raise DimensionError(f"environment emitted shape {u.shape}, expected ({self.n},)")
        norm = float(np.max(np.abs(u)))
        if not norm <= self.u_max:
            raise BoundViolationError(
                f"round {t}: payoff sup-norm {norm!r} exceeds u_max={self.u_max!r}")
        return u


@dataclass
class IidStochastic(Environment):
    """Independent Bernoulli(means_j) * u_max payoffs."""

    means: Sequence[float] | None = None

    def __post_init__(self):
        self.kind = "iid_stochastic"
        if self.means is None:
            self.means = np.linspace(0.8, 0.2, self.n) if self.n > 1 else np.array([0.5])
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.shape != (self.n,) or np.any((self.means < 0) | (self.means > 1)):
            raise SpecError("means must hold one probability in [0, 1] per alternative")
        super().__post_init__()

    def payoff(self, t, history):
        return self.u_max * (self.rng.random(self.n) < self.means)


@dataclass
class AdaptiveAdversary(Environment):
    def __post_init__(self):
        self.kind = "adaptive_adversary"
        super().__post_init__()

    def payoff(self, t, history):
        return adaptive_adversary_step(history, self.u_max)


@dataclass
class DriftSinusoid(Environment):
    """u_t = u_max * ramp(t) * clip(base + amplitude * sin(frequency * t), 0, 1).

    The ramp rises linearly over `warmup` rounds from the zero pre-history, so
    consecutive payoffs stay close from round 1 on.
    """

    base: Sequence[float] | None = None
    amplitude: Sequence[float] | None = None
    frequency: float = 1.0
    warmup: int = 50

    def __post_init__(self):
        self.kind = "drift_sinusoid"
        if self.base is None:
            self.base = np.linspace(0.5, 0.2, self.n)
        if self.amplitude is None:
            self.amplitude = np.zeros(self.n)
            self.amplitude[0] = 0.01
        self.base = np.asarray(self.base, dtype=np.float64)
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        if self.base.shape != (self.n,) or self.amplitude.shape != (self.n,):
            raise DimensionError("base and amplitude need one entry per alternative")
        if self.warmup < 0:
            raise SpecError(f"warmup must be nonnegative, got {self.warmup}")
        super().__post_init__()

    def payoff(self, t, history):
        ramp = min(1.0, t / self.warmup) if self.warmup else 1.0
        level = np.clip(self.base + self.amplitude * math.sin(self.frequency * t), 0.0, 1.0)
        return self.u_max * ramp * level


@dataclass
class PiecewiseConstant(Environment):
    """Fresh uniform payoff vector every `period` rounds, constant in between."""

    period: int = 100
    _level: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.kind = "piecewise_constant"
        if self.period < 1:
            raise SpecError(f"period must be at least 1, got {self.period}")
        super().__post_init__()

    def reset(self, seed):
        super().reset(seed)
        self._level = None

    def payoff(self, t, history):
        if self._level is None or (t - 1) % self.period == 0:
            self._level = self.u_max * self.rng.random(self.n)
        return self._level


@dataclass
class ReplayFile(Environment):
    """Payoff vectors read from a file, one comma-separated line per round."""

    path: str | Path = ""
    rows: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.kind = "replay_file"
        if not str(self.path):
            raise SpecError("env.params.path is required for replay_file")
        self.rows = read_replay(self.path)
        if self.rows.shape[1] != self.n:
            raise DimensionError(
                f"replay file has {self.rows.shape[1]} columns, expected {self.n}")
        super().__post_init__()

    def payoff(self, t, history):
        if t > self.rows.shape[0]:
            raise SpecError(f"replay file holds {self.rows.shape[0]} rounds, asked for round {t}")
        return self.rows[t - 1]


def read_replay(path: str | Path) -> np.ndarray:
    frame = pd.read_csv(path, header=None, dtype=np.float64, float_precision="round_trip")
    return frame.to_numpy()


def write_replay(path: str | Path, stream: np.ndarray) -> None:
    pd.DataFrame(np.asarray(stream)).to_csv(path, header=False, index=False, float_format="%.17g")


_ENVIRONMENTS = {
    "iid_stochastic": IidStochastic,
    "adaptive_adversary": AdaptiveAdversary,
    "drift_sinusoid": DriftSinusoid,
    "piecewise_constant": PiecewiseConstant,
    "replay_file": ReplayFile,
}


def make_environment(kind: EnvKind, n: int, u_max: float = 1.0, seed: int = 0, **params) -> Environment:
    try:
        cls = _ENVIRONMENTS[kind]
    except KeyError:
        raise SpecError(f"unknown environment kind {kind!r}") from None
    try:
        return cls(n=n, u_max=u_max, seed=seed, **params)
    except TypeError as exc:
        raise SpecError(f"bad parameters for {kind}: {exc}") from None


# ================================================================
# 📈 REGRET TRACES
# ================================================================
@dataclass
class RegretTrace:
    """Per-round records of one run; arrays are indexed by round t - 1."""

    model_kind: ModelKind
    eta: float
    u_max: float
    x: np.ndarray
    u: np.ndarray
    payoff: np.ndarray
    regret: np.ndarray
    theta: np.ndarray
    realized: float

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def n_alternatives(self) -> int:
        return self.x.shape[1]

    def theta_history(self) -> np.ndarray:
        """theta_t for every round, accumulated in round order."""
        return np.cumsum(self.u, axis=0)


class TraceRecorder:
    """Builds a RegretTrace incrementally with compensated payoff summation."""

    def __init__(self, model_kind: ModelKind, eta: float, u_max: float, n: int, T: int):
        self.model_kind, self.eta, self.u_max = model_kind, eta, u_max
        self.x = np.empty((T, n))
        self.u = np.empty((T, n))
        self.payoff = np.empty(T)
        self.regret = np.empty(T)
        self.theta = np.zeros(n)
        self.t = 0
        self._sum = 0.0
        self._carry = 0.0

    def record(self, x: np.ndarray, u: np.ndarray, payoff: float) -> float:
        t = self.t
        self.x[t], self.u[t], self.payoff[t] = x, u, payoff
        self.theta = self.theta + u
        # Kahan summation of realised payoff
        y = payoff - self._carry
        total = self._sum + y
        self._carry = (total - self._sum) - y
        self._sum = total
        self.regret[t] = float(self.theta.max()) - self._sum
        self.t += 1
        return self.regret[t]

    def finish(self) -> RegretTrace:
        t = self.t
        return RegretTrace(self.model_kind, self.eta, self.u_max, self.x[:t], self.u[:t],
                           self.payoff[:t], self.regret[:t], self.theta, self._sum)


def run_odp(learner: Learner, env: Environment, T: int, seed: int = 0) -> RegretTrace:
    """Drive `learner` through T rounds of online decision making against `env`."""
    if T < 1:
        raise SpecError(f"T must be at least 1, got {T}")
    if env.n != learner.model.n_alternatives:
        raise DimensionError(
            f"environment has {env.n} alternatives, learner has {learner.model.n_alternatives}")
    env.reset(seed)
    recorder = TraceRecorder(learner.model.kind, learner.eta, learner.u_max, env.n, T)
    history: list[np.ndarray] = []
    for t in range(1, T + 1):
        x_t = learner.current_x.copy()
        history.append(x_t)
        u_t = env.emit(t, tuple(history))
        payoff, _ = learner.step(u_t)
        recorder.record(x_t, u_t, payoff)
    trace = recorder.finish()
    logger.info("run finished: %s, T=%d, regret=%.6g", trace.model_kind.value, T, regret(trace))
    return trace


def regret(trace: RegretTrace) -> float:
    if trace.T == 0:
        raise SpecError("regret of an empty trace")
    return float(trace.regret[-1])


def avg_regret(trace: RegretTrace) -> float:
    return regret(trace) / trace.T


def recompute_regret(trace: RegretTrace) -> np.ndarray:
    """Regret per round recomputed from the stored x_t and u_t."""
    realized = np.cumsum(np.einsum("tj,tj->t", trace.x, trace.u))
    return trace.theta_history().max(axis=1) - realized


def hannan_slope(horizons: Sequence[int], avg_regrets: Sequence[float]) -> float:
    """Slope of log(average regret) against log(T); about -1/2 for sqrt(T) regret."""
    slope, _ = np.polyfit(np.log(np.asarray(horizons, dtype=np.float64)),
                          np.log(np.asarray(avg_regrets, dtype=np.float64)), 1)
    return float(slope)


# ================================================================
# 📋 BOUND REPORTS
# ================================================================
class BoundReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: str
    n_alternatives: int
    T: int
    u_max: float
    eta: float
    bound_thm1: float
    bound_thm2: float
    bound_table: float
    bound_at_eta: float
    realized_regret: float
    ratio: float


def bound_report(model: GevModel, T: int, u_max: float, realized: RegretTrace) -> BoundReport:
    """Tuned bounds of all three variants plus the hard bound at the η actually used.

    `ratio` is realised regret over the un-optimised phi(0) bound at that η,
    which holds for any η and so must stay at or below 1.
    """
    if realized.model_kind != model.kind or realized.n_alternatives != model.n_alternatives:
        raise MismatchError(
            f"trace was produced by {realized.model_kind.value} with {realized.n_alternatives} "
            f"alternatives, report asked for {model.kind.value} with {model.n_alternatives}")
    if realized.T != T:
        raise MismatchError(f"trace has {realized.T} rounds, report asked for T={T}")
    bounds = {variant: optimal_eta(model, T, u_max, variant)[1]
              for variant in ("thm1", "thm2", "table")}
    at_eta = bound_at_eta(model, realized.eta, T, u_max, "thm1")
    value = regret(realized)
    return BoundReport(
        model=model.kind.value,
        n_alternatives=model.n_alternatives,
        T=T,
        u_max=u_max,
        eta=realized.eta,
        bound_thm1=bounds["thm1"],
        bound_thm2=bounds["thm2"],
        bound_table=bounds["table"],
        bound_at_eta=at_eta,
        realized_regret=value,
        ratio=value / at_eta,
    )


def bounds_table(n: int, T: int, u_max: float = 1.0, lam: float = 0.5) -> pd.DataFrame:
    """Optimal step size and tuned bound of every model kind at a common min lambda.

    The table columns use log N for log G(1); the GNL family then scales the
    MNL row by sqrt(2 / lambda - 1).
    """
    rows = []
    for kind in ModelKind:
        model = default_model(kind, n, lam)
        eta_thm2, bound_thm2 = optimal_eta(model, T, u_max, "thm2")
        eta_table, bound_table = optimal_eta(model, T, u_max, "table")
        rows.append({
            "model": kind.value,
            "min_lambda": model.min_lambda,
            "lipschitz": model.lipschitz_numerator,
            "eta_table": eta_table,
            "bound_table": bound_table,
            "eta_thm2": eta_thm2,
            "bound_thm2": bound_thm2,
        })
    frame = pd.DataFrame(rows)
    frame["factor_vs_mnl"] = frame["bound_table"] / float(frame.loc[frame["model"] == "mnl", "bound_table"].iloc[0])
    return frame


class OftrlReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    recency_S: int
    variation_norm: Literal["inf"] = "inf"
    variation_B: float
    prediction_error: float
    scaled_variation: float
    error_bound: float
    tuned_bound: float
    realized_regret: float
    ratio: float


def oftrl_report(state: OftrlState, trace: RegretTrace, bound_variant: BoundVariant = "thm1") -> OftrlReport:
    """Realised regret of an optimistic run against the bound on its own prediction errors."""
    if trace.model_kind != state.model.kind or trace.T != state.round:
        raise MismatchError("trace was not produced by this optimistic learner")
    variation = recency_variation(trace.u, state.horizon)
    bound = oftrl_error_bound(state.model, state.eta, state.sq_prediction_error, bound_variant)
    B = max(variation.max_step, 1e-300)
    _, tuned = oftrl_eta(state.model, trace.T, state.horizon, B, bound_variant)
    value = regret(trace)
    return OftrlReport(
        recency_S=state.horizon,
        variation_B=variation.max_step,
        prediction_error=variation.prediction_error,
        scaled_variation=variation.scaled_variation,
        error_bound=bound,
        tuned_bound=tuned,
        realized_regret=value,
        ratio=value / bound,
    )
