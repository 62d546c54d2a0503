"""Online decision rules.

The Social Surplus Algorithm plays x_t = grad phi(theta_{t-1}); its FTRL dual
is written out in closed form for MNL (entropic regularizer), together with
the multiplicative recursive update and optimistic FTRL with an S-step
recency predictor.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import softmax, xlogy

from tools.errors import DegenerateModelError, DimensionError, DomainError
from tools.gev_models import (GevModel, PayoffVector, as_vector, choice_probs,
                              gnl_two_stage, log_generator)
from tools.settings import EULER_GAMMA

logger = logging.getLogger(__name__)

BoundVariant = Literal["thm1", "thm2", "table"]
SIMPLEX_TOL = 1e-9


# ================================================================
# 🧠 SOCIAL SURPLUS ALGORITHM
# ================================================================
@dataclass
class SsaState:
    """Learner state; single owner, mutated in place by ssa_step."""

    model: GevModel
    eta: float
    u_max: float = 1.0
    theta: np.ndarray = field(default=None)
    current_x: np.ndarray = field(default=None)
    round: int = 0

    def step(self, u) -> tuple[float, np.ndarray]:
        return ssa_step(self, u)


def _check_eta(eta: float) -> float:
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")
    return float(eta)


def checked_payoff(u, u_max: float, n: int) -> np.ndarray:
    values = PayoffVector(as_vector(u), u_max).values
    if values.shape[0] != n:
        raise DimensionError(f"payoff has {values.shape[0]} entries, expected {n}")
    return values


def ssa_init(model: GevModel, eta: float, u_max: float = 1.0) -> SsaState:
    eta = _check_eta(eta)
    theta = np.zeros(model.n_alternatives)
    return SsaState(model, eta, float(u_max), theta, choice_probs(model, theta, eta), 0)


def ssa_step(state: SsaState, u) -> tuple[float, np.ndarray]:
    """Collect <u, x_t> on the committed distribution, then fold u into theta."""
    u = checked_payoff(u, state.u_max, state.model.n_alternatives)
    payoff = float(u @ state.current_x)
    state.theta = state.theta + u
    state.round += 1
    state.current_x = choice_probs(state.model, state.theta, state.eta)
    return payoff, state.current_x


# ================================================================
# 📐 STEP SIZES AND BOUNDS
# ================================================================
def bound_constant(model: GevModel, variant: BoundVariant = "thm2") -> float:
    """The surplus-at-zero term of the regret bound.

    thm1 uses phi(0) = log G(1) + gamma, thm2 uses log G(1), table uses the
    upper bound log N.
    """
    log_g1 = log_generator(model, np.zeros(model.n_alternatives))
    if variant == "thm1":
        return log_g1 + EULER_GAMMA
    if variant == "thm2":
        return log_g1
    if variant == "table":
        return math.log(model.n_alternatives)
    raise DomainError(f"unknown bound variant {variant!r}")


def _degenerate_guard(model: GevModel, constant: float) -> None:
    if model.n_alternatives == 1 or not constant > 0:
        raise DegenerateModelError(
            "log G(1) = 0: a single-alternative model has no step size to tune")


def optimal_eta(model: GevModel, T: int, u_max: float,
                bound_variant: BoundVariant = "thm2") -> tuple[float, float]:
    if T < 1:
        raise DomainError(f"T must be at least 1, got {T}")
    if not u_max > 0:
        raise DomainError(f"u_max must be positive, got {u_max!r}")
    constant = bound_constant(model, bound_variant)
    _degenerate_guard(model, constant)
    lip = model.lipschitz_numerator
    eta = u_max * math.sqrt(lip * T / (2.0 * constant))
    bound = u_max * math.sqrt(2.0 * constant * lip * T)
    return eta, bound


def bound_at_eta(model: GevModel, eta: float, T: int, u_max: float,
                 bound_variant: BoundVariant = "thm1") -> float:
    """eta * phi(0) + (L / 2 eta) T u_max^2 for an arbitrary eta."""
    eta = _check_eta(eta)
    constant = bound_constant(model, bound_variant)
    return eta * constant + model.lipschitz_numerator * T * u_max**2 / (2.0 * eta)


# ================================================================
# 🔁 FTRL DUAL (MNL)
# ================================================================
def ftrl_mnl_closed_form(theta, eta: float) -> np.ndarray:
    """argmax_x <theta, x> - eta sum x log x, i.e. softmax(theta / eta)."""
    return softmax(as_vector(theta) / _check_eta(eta))


def _check_simplex(x) -> np.ndarray:
    x = as_vector(x)
    if np.any(x < -SIMPLEX_TOL) or abs(x.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError("x is not on the probability simplex")
    return np.clip(x, 0.0, None)


def regularizer_mnl(x, eta: float) -> float:
    """Entropic regularizer eta * sum x log x (0 log 0 = 0); never positive."""
    x = _check_simplex(x)
    return _check_eta(eta) * float(xlogy(x, x).sum())


def regularizer_as_shocks(x, eta: float) -> float:
    """The same regularizer written as -eta * sum x_i e_i with expected shocks e_i = -log x_i."""
    x = _check_simplex(x)
    with np.errstate(divide="ignore"):
        shocks = np.where(x > 0.0, -np.log(x), 0.0)
    return -_check_eta(eta) * float(np.sum(x * shocks))


def fenchel_value(theta, x, eta: float) -> float:
    """<theta, x> - R(x); equals eta * logsumexp(theta / eta) at x = softmax(theta / eta)."""
    return float(as_vector(theta) @ as_vector(x)) - regularizer_mnl(x, eta)


def recursive_update_mnl(x_t, u, eta: float) -> np.ndarray:
    """Exponential-weights step: normalize(x_t * e^(u / eta))."""
    x_t = as_vector(x_t)
    if np.any(~(x_t > 0.0)):
        raise DomainError("recursive update needs a strictly positive distribution")
    return softmax(np.log(x_t) + as_vector(u) / _check_eta(eta))


def fenchel_identity_residual(model: GevModel, theta, eta: float) -> float:
    """max_j |-log x_j - (log G(e^z) - z_j)| for logit models, the two-stage
    mixture residual max_j |sum_k P_k P_jk - x_j| otherwise."""
    x = choice_probs(model, theta, eta)
    if model.is_logit:
        z = as_vector(theta) / eta
        with np.errstate(divide="ignore"):
            lhs = -np.log(x)
        return float(np.max(np.abs(lhs - (log_generator(model, z) - z))))
    nest_probs, cond = gnl_two_stage(model, theta, eta)
    return float(np.max(np.abs(nest_probs @ cond - x)))


# ================================================================
# 🔮 OPTIMISTIC FTRL WITH RECENCY BIAS
# ================================================================
@dataclass
class OftrlState:
    inner: SsaState
    horizon: int
    buffer: deque = field(default=None)
    current_x: np.ndarray = field(default=None)
    sq_prediction_error: float = 0.0

    @property
    def model(self) -> GevModel:
        return self.inner.model

    @property
    def eta(self) -> float:
        return self.inner.eta

    @property
    def u_max(self) -> float:
        return self.inner.u_max

    @property
    def theta(self) -> np.ndarray:
        return self.inner.theta

    @property
    def round(self) -> int:
        return self.inner.round

    @property
    def predictor(self) -> np.ndarray:
        """Mean of the S most recent payoffs, zeros standing in before round S."""
        return np.mean(np.stack(self.buffer), axis=0)

    def step(self, u) -> tuple[float, np.ndarray]:
        return oftrl_step(self, u)


def oftrl_init(model: GevModel, eta: float, S: int, u_max: float = 1.0) -> OftrlState:
    if S < 1:
        raise DomainError(f"recency horizon S must be at least 1, got {S}")
    inner = ssa_init(model, eta, u_max)
    n = model.n_alternatives
    buffer = deque((np.zeros(n) for _ in range(S)), maxlen=S)
    return OftrlState(inner, S, buffer, inner.current_x.copy())


def oftrl_step(state: OftrlState, u) -> tuple[float, np.ndarray]:
    u = checked_payoff(u, state.u_max, state.model.n_alternatives)
    payoff = float(u @ state.current_x)
    state.sq_prediction_error += float(np.max(np.abs(u - state.predictor))) ** 2
    ssa_step(state.inner, u)
    state.buffer.append(u)
    state.current_x = choice_probs(state.model, state.inner.theta + state.predictor, state.eta)
    return payoff, state.current_x


def oftrl_eta(model: GevModel, T: int, S: int, B: float,
              bound_variant: BoundVariant = "thm1") -> tuple[float, float]:
    """Step size sqrt(L T S^2 B^2 / 2 phi(0)) and the bound S B sqrt(2 L T phi(0))."""
    if not B > 0:
        raise DomainError(f"variation bound B must be positive, got {B!r}")
    constant = bound_constant(model, bound_variant)
    _degenerate_guard(model, constant)
    lip = model.lipschitz_numerator
    eta = math.sqrt(lip * T * S**2 * B**2 / (2.0 * constant))
    return eta, S * B * math.sqrt(2.0 * lip * T * constant)


def oftrl_error_bound(model: GevModel, eta: float, sq_prediction_error: float,
                      bound_variant: BoundVariant = "thm1") -> float:
    """eta phi(0) + (L / 2 eta) sum_t |u_t - beta_t|_inf^2 on a realised stream."""
    eta = _check_eta(eta)
    return (eta * bound_constant(model, bound_variant)
            + model.lipschitz_numerator * sq_prediction_error / (2.0 * eta))


@dataclass(frozen=True)
class RecencyVariation:
    prediction_error: float  # sum |u_t - beta_t|^2
    scaled_variation: float  # S^2 sum |u_t - u_{t-1}|^2
    max_step: float  # B, measured in the sup-norm


def recency_variation(stream: np.ndarray, S: int) -> RecencyVariation:
    """Both sides of the S-step predictor inequality, with u_0 = 0 and zero padding."""
    stream = np.asarray(stream, dtype=np.float64)
    padded = np.vstack([np.zeros((S, stream.shape[1])), stream])
    errors = 0.0
    for t in range(stream.shape[0]):
        beta = padded[t:t + S].mean(axis=0)
        errors += float(np.max(np.abs(stream[t] - beta))) ** 2
    steps = np.max(np.abs(np.diff(padded[S - 1:], axis=0)), axis=1)
    return RecencyVariation(errors, S**2 * float(np.sum(steps**2)), float(steps.max()))
