"""Closed-form GEV choice models.

Every model is stored in generalized nested logit (GNL) form: an N x K matrix
of allocation weights alpha_ik and a vector of nest scales lambda_k. The
generator is

    G(y) = sum_k ( sum_i (alpha_ik * y_i) ** (1 / lambda_k) ) ** lambda_k

and all evaluations run in log space, since cumulative payoffs grow linearly
with the horizon and e^(theta / eta) overflows within a few hundred rounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Hashable, Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import logsumexp, softmax

from tools.errors import BoundViolationError, DimensionError, DomainError, SpecError
from tools.settings import EULER_GAMMA

logger = logging.getLogger(__name__)

MIN_LAMBDA = 1e-6
ROW_SUM_TOL = 1e-12


class ModelKind(str, Enum):
    MNL = "mnl"
    NL = "nl"
    CNL = "cnl"
    PCL = "pcl"
    OGEV = "ogev"
    PDGEV = "pdgev"
    GNL = "gnl"


# ================================================================
# 🧩 DOMAIN TYPES
# ================================================================
def as_vector(values: ArrayLike | "CumulativePayoff" | "PayoffVector") -> np.ndarray:
    if isinstance(values, CumulativePayoff):
        return values.theta
    if isinstance(values, PayoffVector):
        return values.values
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class NestSpec:
    """Allocation weights (N x K) and nest scales (K) of a GNL-form model."""

    alloc: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        alloc = np.array(self.alloc, dtype=np.float64)
        lambdas = np.atleast_1d(np.array(self.lambdas, dtype=np.float64))
        if alloc.ndim != 2:
            raise DimensionError(f"alloc must be an N x K matrix, got shape {alloc.shape}")
        if lambdas.ndim != 1 or lambdas.shape[0] != alloc.shape[1]:
            raise DimensionError(
                f"expected {alloc.shape[1]} nest scales, got shape {lambdas.shape}")
        if alloc.shape[0] < 1 or alloc.shape[1] < 1:
            raise SpecError("a model needs at least one alternative and one nest")
        if not (np.all(np.isfinite(alloc)) and np.all(np.isfinite(lambdas))):
            raise SpecError("alloc and lambdas must be finite")

        bad = lambdas[(lambdas <= 0.0) | (lambdas > 1.0)]
        if bad.size:
            raise SpecError(f"lambda out of (0,1]: {bad.tolist()}")
        if np.any(lambdas < MIN_LAMBDA):
            raise SpecError(
                f"lambda out of (0,1]: values below {MIN_LAMBDA:g} are not accepted")
        if np.any(alloc < 0.0):
            raise SpecError("allocation weights must be nonnegative")

        row_sums = alloc.sum(axis=1)
        off = np.flatnonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL)
        if off.size:
            i = int(off[0])
            raise SpecError(
                f"allocation row {i} sums to {row_sums[i]!r}, expected 1 within {ROW_SUM_TOL:g}")
        empty = np.flatnonzero(~np.any(alloc > 0.0, axis=0))
        if empty.size:
            raise SpecError(f"nest {int(empty[0])} has no members")

        alloc.setflags(write=False)
        lambdas.setflags(write=False)
        object.__setattr__(self, "alloc", alloc)
        object.__setattr__(self, "lambdas", lambdas)

    @property
    def n_alternatives(self) -> int:
        return self.alloc.shape[0]

    @property
    def n_nests(self) -> int:
        return self.alloc.shape[1]

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.alloc[:, k] > 0.0)


@dataclass(frozen=True, eq=False)
class GevModel:
    kind: ModelKind
    nests: NestSpec
    log_alloc: np.ndarray = field(init=False, repr=False)
    lipschitz_numerator: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        with np.errstate(divide="ignore"):
            log_alloc = np.log(self.nests.alloc)
        log_alloc.setflags(write=False)
        object.__setattr__(self, "log_alloc", log_alloc)
        object.__setattr__(self, "lipschitz_numerator",
                           float(2.0 / self.nests.lambdas.min() - 1.0))

    @property
    def n_alternatives(self) -> int:
        return self.nests.n_alternatives

    @property
    def n_nests(self) -> int:
        return self.nests.n_nests

    @property
    def min_lambda(self) -> float:
        return float(self.nests.lambdas.min())

    @property
    def is_logit(self) -> bool:
        """All scales equal 1, so G is linear and the model is MNL."""
        return bool(np.all(self.nests.lambdas == 1.0))


@dataclass(frozen=True)
class PayoffVector:
    values: np.ndarray
    u_max: float = 1.0

    def __post_init__(self):
        values = as_vector(self.values)
        if not self.u_max > 0:
            raise SpecError(f"u_max must be positive, got {self.u_max}")
        norm = float(np.max(np.abs(values))) if values.size else 0.0
        if not norm <= self.u_max:
            raise BoundViolationError(f"payoff sup-norm {norm!r} exceeds u_max={self.u_max!r}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class CumulativePayoff:
    theta: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "CumulativePayoff":
        return cls(np.zeros(n), 0)

    def add(self, u: ArrayLike | PayoffVector) -> "CumulativePayoff":
        return CumulativePayoff(self.theta + as_vector(u), self.t + 1)


# ================================================================
# 🧮 EVALUATION
# ================================================================
def _check_eta(eta: float) -> float:
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta!r}")
    return float(eta)


def _scaled(model: GevModel, theta, eta: float) -> np.ndarray:
    z = as_vector(theta) / _check_eta(eta)
    if z.shape[0] != model.n_alternatives:
        raise DimensionError(
            f"theta has {z.shape[0]} entries, model has {model.n_alternatives} alternatives")
    return z


def _nest_logits(model: GevModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # a[i, k] = (log alpha_ik + z_i) / lambda_k, -inf off the nest
    a = (model.log_alloc + z[:, None]) / model.nests.lambdas[None, :]
    inner = logsumexp(a, axis=0)
    return a, inner


def log_generator(model: GevModel, z: ArrayLike) -> float:
    """log G(e^z)."""
    z = as_vector(z)
    _, inner = _nest_logits(model, z)
    return float(logsumexp(model.nests.lambdas * inner))


def generator_value(model: GevModel, y: ArrayLike) -> float:
    y = as_vector(y)
    if y.shape[0] != model.n_alternatives:
        raise DimensionError(f"y has {y.shape[0]} entries, expected {model.n_alternatives}")
    if np.any(~(y > 0)):
        raise DomainError("generator arguments must be strictly positive")
    return float(np.exp(log_generator(model, np.log(y))))


def surplus(model: GevModel, theta, eta: float) -> float:
    """eta * (log G(e^(theta/eta)) + Euler's gamma)."""
    z = _scaled(model, theta, eta)
    return eta * (log_generator(model, z) + EULER_GAMMA)


def choice_probs(model: GevModel, theta, eta: float) -> np.ndarray:
    """Gradient of the surplus: x_j = y_j G_j(y) / sum_i y_i G_i(y) at y = e^(theta/eta)."""
    z = _scaled(model, theta, eta)
    a, inner = _nest_logits(model, z)
    # log(y_j G_j) = logsumexp_k [(lambda_k - 1) log S_k + a_jk]
    log_w = logsumexp((model.nests.lambdas - 1.0) * inner + a, axis=1)
    x = np.exp(log_w - logsumexp(log_w))
    return x / x.sum()


def gnl_two_stage(model: GevModel, theta, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Nest probabilities (K) and within-nest conditional probabilities (K x N)."""
    z = _scaled(model, theta, eta)
    a, inner = _nest_logits(model, z)
    nest_probs = softmax(model.nests.lambdas * inner)
    cond = np.exp(a - inner[None, :]).T
    return nest_probs, cond


def lipschitz_constant(model: GevModel, eta: float) -> float:
    return model.lipschitz_numerator / _check_eta(eta)


# ================================================================
# 🏗️ CONSTRUCTORS
# ================================================================
def _scales(lambdas: float | Sequence[float], k: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    if arr.size == 1:
        return np.full(k, float(arr[0]))
    if arr.shape != (k,):
        raise DimensionError(f"expected 1 or {k} nest scales, got {arr.size}")
    return arr


def mnl(n: int) -> GevModel:
    if n < 1:
        raise SpecError(f"n must be positive, got {n}")
    return GevModel(ModelKind.MNL, NestSpec(np.ones((n, 1)), np.ones(1)))


def gnl(alloc: ArrayLike, lambdas: float | Sequence[float]) -> GevModel:
    alloc = np.asarray(alloc, dtype=np.float64)
    if alloc.ndim != 2:
        raise DimensionError(f"alloc must be an N x K matrix, got shape {alloc.shape}")
    return GevModel(ModelKind.GNL, NestSpec(alloc, _scales(lambdas, alloc.shape[1])))


def nested_logit(partition: Sequence[Sequence[int]], lambdas: float | Sequence[float],
                 n: int | None = None) -> GevModel:
    flat = [int(i) for nest in partition for i in nest]
    n = len(flat) if n is None else n
    if any(len(nest) == 0 for nest in partition):
        raise SpecError("nested logit nests must be nonempty")
    if sorted(flat) != list(range(n)):
        raise SpecError("partition must cover every alternative exactly once")
    alloc = np.zeros((n, len(partition)))
    for k, nest in enumerate(partition):
        alloc[list(nest), k] = 1.0
    return GevModel(ModelKind.NL, NestSpec(alloc, _scales(lambdas, len(partition))))


def cnl(alloc: ArrayLike, lam: float) -> GevModel:
    alloc = np.asarray(alloc, dtype=np.float64)
    if alloc.ndim != 2:
        raise DimensionError(f"alloc must be an N x K matrix, got shape {alloc.shape}")
    return GevModel(ModelKind.CNL, NestSpec(alloc, np.full(alloc.shape[1], float(lam))))


def pcl(n: int, lambdas: float | Sequence[float] = 1.0) -> GevModel:
    """One nest per unordered pair i < j, each member weighted 1/(N-1)."""
    if n < 2:
        raise SpecError("paired combinatorial logit needs at least two alternatives")
    pairs = list(combinations(range(n), 2))
    alloc = np.zeros((n, len(pairs)))
    for k, (i, j) in enumerate(pairs):
        alloc[i, k] = alloc[j, k] = 1.0 / (n - 1)
    return GevModel(ModelKind.PCL, NestSpec(alloc, _scales(lambdas, len(pairs))))


def ogev(n: int, overlap: int = 1, weights: Sequence[float] | None = None,
         lambdas: float | Sequence[float] = 1.0) -> GevModel:
    """Ordered GEV: nest l holds alternatives l - overlap .. l (N + overlap nests)."""
    if n < 1 or overlap < 0:
        raise SpecError(f"ogev needs n >= 1 and overlap >= 0, got n={n}, overlap={overlap}")
    if weights is None:
        weights = np.full(overlap + 1, 1.0 / (overlap + 1))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (overlap + 1,):
        raise DimensionError(f"expected {overlap + 1} overlap weights, got {weights.size}")
    k = n + overlap
    alloc = np.zeros((n, k))
    for i in range(n):
        alloc[i, i:i + overlap + 1] = weights
    return GevModel(ModelKind.OGEV, NestSpec(alloc, _scales(lambdas, k)))


def pdgev(attributes: Sequence[Sequence[Hashable]], alphas: Sequence[float],
          lambdas: Sequence[float]) -> GevModel:
    """One nest per (attribute, level); attributes[d][i] is alternative i's level of d."""
    if not (len(attributes) == len(alphas) == len(lambdas)) or not attributes:
        raise DimensionError("attributes, alphas and lambdas must have one entry per attribute")
    n = len(attributes[0])
    columns, scales = [], []
    for levels, alpha_d, lambda_d in zip(attributes, alphas, lambdas):
        if len(levels) != n:
            raise DimensionError("every attribute must label all alternatives")
        for level in dict.fromkeys(levels):
            col = np.array([alpha_d if lv == level else 0.0 for lv in levels])
            columns.append(col)
            scales.append(lambda_d)
    return GevModel(ModelKind.PDGEV, NestSpec(np.column_stack(columns), np.asarray(scales)))


_BUILDERS = {
    ModelKind.MNL: mnl,
    ModelKind.NL: nested_logit,
    ModelKind.CNL: cnl,
    ModelKind.PCL: pcl,
    ModelKind.OGEV: ogev,
    ModelKind.PDGEV: pdgev,
    ModelKind.GNL: gnl,
}


def make_special(kind: ModelKind | str, **params) -> GevModel:
    return _BUILDERS[ModelKind(kind)](**params)


def default_model(kind: ModelKind | str, n: int, lam: float = 0.5, overlap: int = 1) -> GevModel:
    """A deterministic instance of each kind with min lambda = lam (MNL ignores lam)."""
    kind = ModelKind(kind)
    if kind is ModelKind.MNL:
        return mnl(n)
    if n < 2:
        raise SpecError(f"{kind.value} needs at least two alternatives")
    half = n // 2
    if kind is ModelKind.NL:
        return nested_logit([range(half), range(half, n)], lam)
    if kind is ModelKind.CNL:
        alloc = np.zeros((n, 3))
        alloc[np.arange(n), np.arange(n) % 2] = 0.5
        alloc[:, 2] = 0.5
        return cnl(alloc, lam)
    if kind is ModelKind.PCL:
        return pcl(n, lam)
    if kind is ModelKind.OGEV:
        return ogev(n, overlap, None, lam)
    if kind is ModelKind.PDGEV:
        attributes = [[i % 2 for i in range(n)], [int(i < half) for i in range(n)]]
        return pdgev(attributes, [0.5, 0.5], [lam, (1.0 + lam) / 2.0])
    alloc = np.zeros((n, 3))
    alloc[:half, 0] = 0.7
    alloc[half:, 1] = 0.7
    alloc[:, 2] = 0.3
    return gnl(alloc, [lam, (1.0 + lam) / 2.0, lam])


# ================================================================
# 📄 JSON DOCUMENTS
# ================================================================
class NestDoc(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    lambda_: float = Field(alias="lambda")
    alloc: list[float]


class GevModelDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ModelKind
    n_alternatives: int = Field(gt=0)
    nests: list[NestDoc] = Field(min_length=1)


def model_to_doc(model: GevModel) -> GevModelDoc:
    return GevModelDoc(
        kind=model.kind,
        n_alternatives=model.n_alternatives,
        nests=[NestDoc(lambda_=float(model.nests.lambdas[k]),
                       alloc=model.nests.alloc[:, k].tolist())
               for k in range(model.n_nests)],
    )


def model_from_doc(doc: GevModelDoc) -> GevModel:
    for k, nest in enumerate(doc.nests):
        if len(nest.alloc) != doc.n_alternatives:
            raise DimensionError(
                f"nests[{k}].alloc has {len(nest.alloc)} entries, expected {doc.n_alternatives}")
    alloc = np.column_stack([nest.alloc for nest in doc.nests])
    lambdas = np.array([nest.lambda_ for nest in doc.nests])
    return GevModel(doc.kind, NestSpec(alloc, lambdas))


def model_to_json(model: GevModel) -> str:
    return model_to_doc(model).model_dump_json(by_alias=True)


def model_from_json(text: str) -> GevModel:
    return model_from_doc(GevModelDoc.model_validate_json(text))
