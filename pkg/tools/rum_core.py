"""Distribution-level RUM machinery.

Shock samplers and Monte Carlo follow-the-perturbed-leader oracles (the
expected FTPL choice is the surplus gradient), plus finite-difference checks
of the Hessian-trace condition and of the Bregman bound.

Exact MEV shocks are only sampled for MNL (i.i.d. Gumbel) and nested logit
(two-level Gumbel composition); other kinds are checked by finite differences.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import reduce
from itertools import product
from typing import Callable, Literal

import numpy as np
from scipy.special import logsumexp

from tools import seeds
from tools.errors import DomainError
from tools.gev_models import (GevModel, ModelKind, as_vector, choice_probs,
                              lipschitz_constant, surplus)

logger = logging.getLogger(__name__)

U_FLOOR = 1e-300
GRAD_STEP = 1e-5
HESSIAN_STEP = 1e-4
CHUNK = 100_000
EXACT_NORM_MAX_N = 12

DrawFn = Callable[[np.random.Generator, tuple[int, ...]], np.ndarray]


# ================================================================
# 🎲 SAMPLERS
# ================================================================
def gumbel(rng: np.random.Generator, size: tuple[int, ...]) -> np.ndarray:
    """Standard Gumbel draws by inverse CDF, U kept inside (0, 1)."""
    u = np.clip(rng.random(size), U_FLOOR, np.nextafter(1.0, 0.0))
    return -np.log(-np.log(u))


@dataclass
class ShockSampler:
    """A seedable stream of shock vectors. Confine each instance to one thread."""

    kind: Literal["gumbel_iid", "custom"] = "gumbel_iid"
    seed: int = 0
    draw_fn: DrawFn | None = None
    rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "custom" and self.draw_fn is None:
            raise DomainError("a custom sampler needs a draw function")
        if self.rng is None:
            self.rng = seeds.stream(self.seed, "sampler")

    def draw(self, size: tuple[int, ...]) -> np.ndarray:
        if self.kind == "gumbel_iid":
            return gumbel(self.rng, size)
        return np.asarray(self.draw_fn(self.rng, size), dtype=np.float64)

    def reseeded(self, seed: int) -> "ShockSampler":
        return ShockSampler(self.kind, seed, self.draw_fn)


# ================================================================
# 📊 MONTE CARLO TALLIES
# ================================================================
@dataclass(frozen=True)
class McEstimate:
    value: np.ndarray | float
    stderr: np.ndarray | float
    n: int


@dataclass(frozen=True)
class McTally:
    """Partial sums of a Monte Carlo run; merge is associative."""

    n: int
    total: np.ndarray
    total_sq: np.ndarray

    def merge(self, other: "McTally") -> "McTally":
        return McTally(self.n + other.n, self.total + other.total, self.total_sq + other.total_sq)

    def estimate(self) -> McEstimate:
        mean = self.total / self.n
        var = np.maximum(self.total_sq / self.n - mean**2, 0.0)
        stderr = np.sqrt(var / self.n)
        if mean.ndim == 0:
            return McEstimate(float(mean), float(stderr), self.n)
        return McEstimate(mean, stderr, self.n)


# ================================================================
# 🎯 PERTURBED-LEADER ORACLES
# ================================================================
def ftpl_choose(theta, eta: float, sampler: ShockSampler) -> int:
    """argmax_j (theta_j + eta * eps_j) for one fresh draw; ties go to the lowest index."""
    theta = as_vector(theta)
    return int(np.argmax(theta + eta * sampler.draw(theta.shape)))


def _nested_draws(model: GevModel, theta: np.ndarray, eta: float, sampler: ShockSampler,
                  m: int) -> tuple[np.ndarray, np.ndarray]:
    """Choices and max utilities for nested logit by two-level Gumbel composition.

    The nest is picked by argmax_k (v_k + g_k) with v_k the inclusive value; the
    alternative by argmax_j in that nest of (theta_j / (eta lambda_k) + zeta_j).
    """
    lambdas = model.nests.lambdas
    mask = model.nests.alloc.T > 0.0
    z = theta / eta
    scaled = np.where(mask, z[None, :] / lambdas[:, None], -np.inf)
    inclusive = lambdas * logsumexp(scaled, axis=1)
    top = inclusive[None, :] + sampler.draw((m, model.n_nests))
    nest = np.argmax(top, axis=1)
    inner = scaled[nest] + sampler.draw((m, model.n_alternatives))
    return np.argmax(inner, axis=1), eta * top.max(axis=1)


def _check_oracle_model(model: GevModel | None, sampler: ShockSampler) -> None:
    if model is None or model.is_logit:
        return
    if sampler.kind != "gumbel_iid":
        raise DomainError("nested Monte Carlo composes Gumbel shocks; custom samplers only drive plain logit")
    if model.kind is ModelKind.NL and np.all(np.isin(model.nests.alloc, (0.0, 1.0))):
        return
    raise DomainError(
        f"Monte Carlo shocks are only available for MNL and nested logit, not {model.kind.value}")


def _draw_chunk(theta, eta, sampler, model, m) -> tuple[np.ndarray, np.ndarray]:
    if model is not None and not model.is_logit:
        return _nested_draws(model, theta, eta, sampler, m)
    utilities = theta[None, :] + eta * sampler.draw((m, theta.shape[0]))
    return np.argmax(utilities, axis=1), utilities.max(axis=1)


def _tally(theta, eta, sampler, n_samples, model, which: str) -> McTally:
    n = theta.shape[0]
    total = np.zeros(n) if which == "choice" else np.zeros(())
    total_sq = np.zeros_like(total)
    done = 0
    while done < n_samples:
        m = min(CHUNK, n_samples - done)
        picks, best = _draw_chunk(theta, eta, sampler, model, m)
        if which == "choice":
            counts = np.bincount(picks, minlength=n).astype(np.float64)
            total += counts
            total_sq += counts
        else:
            total += best.sum()
            total_sq += np.square(best).sum()
        done += m
    return McTally(n_samples, total, total_sq)


def _run(theta, eta, sampler, n_samples, seed, model, n_shards, which) -> McEstimate:
    if n_samples < 1:
        raise DomainError(f"n_samples must be at least 1, got {n_samples}")
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")
    _check_oracle_model(model, sampler)
    theta = as_vector(theta)
    if seed is not None:
        sampler = sampler.reseeded(seed)
    if n_shards <= 1:
        return _tally(theta, eta, sampler, n_samples, model, which).estimate()
    sizes = [n_samples // n_shards + (s < n_samples % n_shards) for s in range(n_shards)]
    shards = [ShockSampler(sampler.kind, sampler.seed, sampler.draw_fn, rng=rng)
              for rng in seeds.shard_streams(sampler.seed, "sampler", n_shards)]
    tallies = [_tally(theta, eta, shard, size, model, which)
               for shard, size in zip(shards, sizes) if size]
    return reduce(McTally.merge, tallies).estimate()


def mc_choice_probs(theta, eta: float, sampler: ShockSampler, n_samples: int,
                    seed: int | None = None, model: GevModel | None = None,
                    n_shards: int = 1) -> McEstimate:
    """Empirical FTPL choice frequencies with per-coordinate standard errors."""
    return _run(theta, eta, sampler, n_samples, seed, model, n_shards, "choice")


def mc_surplus(theta, eta: float, sampler: ShockSampler, n_samples: int,
               seed: int | None = None, model: GevModel | None = None,
               n_shards: int = 1) -> McEstimate:
    """Sample mean of max_j (theta_j + eta * eps_j)."""
    return _run(theta, eta, sampler, n_samples, seed, model, n_shards, "surplus")


# ================================================================
# 🔬 CURVATURE CHECKS
# ================================================================
def hessian_diagonal(model: GevModel, theta, eta: float, fd_step: float = HESSIAN_STEP) -> np.ndarray:
    theta = as_vector(theta)
    base = surplus(model, theta, eta)
    diag = np.empty(theta.shape[0])
    for j in range(theta.shape[0]):
        step = np.zeros_like(theta)
        step[j] = fd_step
        diag[j] = (surplus(model, theta + step, eta) - 2.0 * base
                   + surplus(model, theta - step, eta)) / fd_step**2
    return diag


def hessian_matrix(model: GevModel, theta, eta: float, fd_step: float = GRAD_STEP) -> np.ndarray:
    """Symmetrised central-difference Jacobian of the choice probabilities."""
    theta = as_vector(theta)
    n = theta.shape[0]
    hess = np.empty((n, n))
    for j in range(n):
        step = np.zeros(n)
        step[j] = fd_step
        hess[:, j] = (choice_probs(model, theta + step, eta)
                      - choice_probs(model, theta - step, eta)) / (2.0 * fd_step)
    return 0.5 * (hess + hess.T)


def inf_one_norm(matrix: np.ndarray) -> tuple[float, bool]:
    """Operator norm max_{|u|_inf <= 1} |A u|_1 and whether it is exact.

    Exact by enumerating sign vectors up to EXACT_NORM_MAX_N columns; above
    that the entrywise absolute sum is returned as an upper bound.
    """
    n = matrix.shape[1]
    if n > EXACT_NORM_MAX_N:
        return float(np.abs(matrix).sum()), False
    signs = np.array([(1.0,) + s for s in product((1.0, -1.0), repeat=n - 1)])
    return float(np.abs(signs @ matrix.T).sum(axis=1).max()), True


@dataclass(frozen=True)
class HessianReport:
    trace: float
    bound: float  # L / eta
    two_trace_slack: float
    inf_one_norm: float
    inf_one_exact: bool
    inf_one_slack: float

    @property
    def trace_condition_holds(self) -> bool:
        return self.two_trace_slack >= -HESSIAN_STEP

    @property
    def norm_condition_holds(self) -> bool:
        return self.inf_one_slack >= -HESSIAN_STEP


def hessian_report(model: GevModel, theta, eta: float, fd_step: float = HESSIAN_STEP) -> HessianReport:
    if not fd_step > 0:
        raise DomainError(f"fd_step must be positive, got {fd_step!r}")
    bound = lipschitz_constant(model, eta)
    trace = float(hessian_diagonal(model, theta, eta, fd_step).sum())
    norm, exact = inf_one_norm(hessian_matrix(model, theta, eta, fd_step))
    return HessianReport(trace, bound, bound - 2.0 * trace, norm, exact, bound - norm)


def hessian_trace_check(model: GevModel, theta, eta: float, fd_step: float = HESSIAN_STEP) -> float:
    """Slack L/eta - 2 Tr(Hessian); >= -1e-4 certifies the trace condition."""
    if not fd_step > 0:
        raise DomainError(f"fd_step must be positive, got {fd_step!r}")
    trace = float(hessian_diagonal(model, theta, eta, fd_step).sum())
    return lipschitz_constant(model, eta) - 2.0 * trace


def bregman_divergence(model: GevModel, theta_prev, u, eta: float) -> float:
    """phi(theta + u) - phi(theta) - <grad phi(theta), u>."""
    theta_prev = as_vector(theta_prev)
    u = as_vector(u)
    return (surplus(model, theta_prev + u, eta) - surplus(model, theta_prev, eta)
            - float(choice_probs(model, theta_prev, eta) @ u))


def bregman_bound(model: GevModel, eta: float, u_max: float) -> float:
    return 0.5 * lipschitz_constant(model, eta) * u_max**2
