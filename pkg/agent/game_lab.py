"""Repeated normal-form games played by surplus-gradient learners.

Each round every player commits a mixed strategy, then observes the exact
expected payoff of each of its pure strategies against the others' current
mixtures. The time-averaged product distribution is scored as an approximate
coarse correlated equilibrium.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tools import seeds
from tools.errors import DimensionError, SpecError
from tools.settings import MAX_TENSOR_ENTRIES
from agent.environments import Learner, RegretTrace, TraceRecorder, regret

logger = logging.getLogger(__name__)


# ================================================================
# 🧩 GAMES
# ================================================================
@dataclass(frozen=True, eq=False)
class GameSpec:
    """payoffs[p][s_1, .., s_P] is player p's utility, in [0, 1]."""

    payoffs: np.ndarray

    def __post_init__(self):
        payoffs = np.array(self.payoffs, dtype=np.float64)
        if payoffs.ndim < 2:
            raise DimensionError("payoff tensor needs a player axis and at least one strategy axis")
        n_players, shape = payoffs.shape[0], payoffs.shape[1:]
        if len(shape) != n_players:
            raise DimensionError(
                f"payoff tensor for {n_players} players must have {n_players} strategy axes, "
                f"got {len(shape)}")
        if len(set(shape)) != 1:
            raise DimensionError(f"every player needs the same number of strategies, got {shape}")
        if payoffs[0].size > MAX_TENSOR_ENTRIES:
            raise SpecError(f"game has {payoffs[0].size} profiles, cap is {MAX_TENSOR_ENTRIES}")
        if not np.all((payoffs >= 0.0) & (payoffs <= 1.0)):
            raise SpecError("utilities must lie in [0, 1]")
        payoffs.setflags(write=False)
        object.__setattr__(self, "payoffs", payoffs)

    @property
    def n_players(self) -> int:
        return self.payoffs.shape[0]

    @property
    def n_strategies(self) -> int:
        return self.payoffs.shape[1]


def matching_pennies() -> GameSpec:
    match = np.array([[1.0, 0.0], [0.0, 1.0]])
    return GameSpec(np.stack([match, 1.0 - match]))


def rock_paper_scissors() -> GameSpec:
    # row beats column: paper > rock, scissors > paper, rock > scissors
    row = np.array([[0.5, 0.0, 1.0],
                    [1.0, 0.5, 0.0],
                    [0.0, 1.0, 0.5]])
    return GameSpec(np.stack([row, 1.0 - row]))


def random_game(seed: int, players: int = 2, strategies: int = 2) -> GameSpec:
    rng = seeds.stream(seed, "game")
    return GameSpec(rng.random((players,) + (strategies,) * players))


BUILTIN_GAMES = {
    "matching_pennies": matching_pennies,
    "rock_paper_scissors": rock_paper_scissors,
    "rps": rock_paper_scissors,
}


class GameDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    players: int = Field(gt=0)
    strategies: int = Field(gt=0)
    payoffs: list


def game_from_doc(doc: GameDoc) -> GameSpec:
    try:
        payoffs = np.array(doc.payoffs, dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"payoffs is not a rectangular tensor: {exc}") from None
    expected = (doc.players,) + (doc.strategies,) * doc.players
    if payoffs.shape != expected:
        raise DimensionError(f"payoffs has shape {payoffs.shape}, expected {expected}")
    return GameSpec(payoffs)


def game_to_doc(game: GameSpec) -> GameDoc:
    return GameDoc(players=game.n_players, strategies=game.n_strategies,
                   payoffs=game.payoffs.tolist())


# ================================================================
# 🎮 PLAY
# ================================================================
def expected_feedback(game: GameSpec, p: int, opponents_mixed: Sequence[np.ndarray]) -> np.ndarray:
    """u_pk = E_{s_-p ~ x_-p}[u_p(k, s_-p)], opponents listed in player order."""
    if len(opponents_mixed) != game.n_players - 1:
        raise DimensionError(
            f"expected {game.n_players - 1} opponent strategies, got {len(opponents_mixed)}")
    table = np.moveaxis(game.payoffs[p], p, 0)
    for mixed in reversed(opponents_mixed):
        mixed = np.asarray(mixed, dtype=np.float64)
        if mixed.shape != (game.n_strategies,):
            raise DimensionError(
                f"opponent strategy has shape {mixed.shape}, expected ({game.n_strategies},)")
        table = table @ mixed
    return table


def _feedback_all(game: GameSpec, xs: list[np.ndarray]) -> list[np.ndarray]:
    return [expected_feedback(game, p, xs[:p] + xs[p + 1:]) for p in range(game.n_players)]


@dataclass
class GameRun:
    traces: list[RegretTrace]
    history: np.ndarray  # (T, P, N) mixed strategies per round

    @property
    def regrets(self) -> list[float]:
        return [regret(trace) for trace in self.traces]


def run_repeated_game(game: GameSpec, learners: Sequence[Learner], T: int, seed: int = 0) -> GameRun:
    """Synchronous rounds: commit all x_pt, then feed each player its expected payoffs.

    Feedback is exact, so `seed` only labels the run.
    """
    if len(learners) != game.n_players:
        raise DimensionError(f"game has {game.n_players} players, got {len(learners)} learners")
    if T < 1:
        raise SpecError(f"T must be at least 1, got {T}")
    for p, learner in enumerate(learners):
        if learner.model.n_alternatives != game.n_strategies:
            raise DimensionError(
                f"player {p}'s model has {learner.model.n_alternatives} alternatives, "
                f"game has {game.n_strategies} strategies")
    recorders = [TraceRecorder(l.model.kind, l.eta, l.u_max, game.n_strategies, T) for l in learners]
    history = np.empty((T, game.n_players, game.n_strategies))
    for t in range(T):
        xs = [learner.current_x.copy() for learner in learners]
        history[t] = xs
        for learner, recorder, x, u in zip(learners, recorders, xs, _feedback_all(game, xs)):
            payoff, _ = learner.step(u)
            recorder.record(x, u, payoff)
    run = GameRun([recorder.finish() for recorder in recorders], history)
    logger.info("game finished: T=%d, seed=%d, max regret=%.6g", T, seed, max(run.regrets))
    return run


# ================================================================
# ⚖️ COARSE CORRELATED EQUILIBRIUM
# ================================================================
@dataclass(frozen=True)
class CceReport:
    expected_utility: list[float]
    best_deviation: list[float]
    delta_emp: float
    max_avg_regret: float
    delta_literal: float
    delta_theory: float | None = None

    def to_dict(self) -> dict:
        return {
            "expected_utility": self.expected_utility,
            "best_deviation": self.best_deviation,
            "delta_emp": self.delta_emp,
            "max_avg_regret": self.max_avg_regret,
            "delta_literal": self.delta_literal,
            "delta_theory": self.delta_theory,
        }


class CceAccumulator:
    """Running sums of E[u_p(s)] and E[u_p(s'_p, s_-p)] under sigma_t = prod_p x_pt.

    Memory stays O(P N); the joint distribution is never formed.
    """

    def __init__(self, game: GameSpec):
        self.game = game
        self.rounds = 0
        self.utility = np.zeros(game.n_players)
        self.deviation = np.zeros((game.n_players, game.n_strategies))

    def update(self, xs: Sequence[np.ndarray]) -> None:
        xs = [np.asarray(x, dtype=np.float64) for x in xs]
        for p, u in enumerate(_feedback_all(self.game, xs)):
            self.deviation[p] += u
            self.utility[p] += float(u @ xs[p])
        self.rounds += 1

    def report(self, delta_theory: float | None = None) -> CceReport:
        if self.rounds == 0:
            raise SpecError("CCE gap needs a nonempty history")
        utility = self.utility / self.rounds
        deviation = self.deviation / self.rounds
        best = deviation.max(axis=1)
        gains = best - utility
        delta = max(0.0, float(gains.max()))
        regrets = self.deviation.max(axis=1) - self.utility
        return CceReport(
            expected_utility=utility.tolist(),
            best_deviation=best.tolist(),
            delta_emp=delta,
            max_avg_regret=float(regrets.max()) / self.rounds,
            delta_literal=float(regrets.max()),
            delta_theory=delta_theory,
        )


def cce_gap(game: GameSpec, history: np.ndarray, delta_theory: float | None = None) -> CceReport:
    """Score the time average of the product distributions in `history` (T x P x N)."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 3 or history.shape[1:] != (game.n_players, game.n_strategies):
        raise DimensionError(
            f"history must have shape (T, {game.n_players}, {game.n_strategies}), got {history.shape}")
    acc = CceAccumulator(game)
    for xs in history:
        acc.update(list(xs))
    return acc.report(delta_theory)
