"""Gaussian belief propagation message updates on a ``FactorGraph``.

Messages are held in information form: a precision (inverse variance) and a
precision-weighted mean. A message with zero precision carries no information;
it reads as mean 0 with infinite variance. Factor-to-variable messages live on
every edge; variable-to-factor messages only on branch edges. A half-iteration
reads only the previous snapshot and writes a fresh one (Jacobi semantics), so
the vectorized updates below equal any sequential traversal.
"""
import csv
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from agbp.config import get_logger, settings
from agbp.errors import GraphError, MessageStateError, UnderdeterminedVariableError
from agbp.graph import FactorGraph, FreezeView

logger = get_logger(__name__)

# messages below this share of their variable's marginal precision count as uninformative
NEGLIGIBLE_SHARE = float(np.finfo(np.float64).eps)


def to_moments(precision, weighted) -> Tuple[np.ndarray, np.ndarray]:
    """(mean, variance) of information-form messages; zero precision gives (0, inf)."""
    precision = np.asarray(precision, dtype=np.float64)
    weighted = np.asarray(weighted, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        variance = 1.0 / precision
        mean = np.where(precision == 0.0, 0.0, weighted / precision)
    return mean, variance


def to_information(mean, variance) -> Tuple[np.ndarray, np.ndarray]:
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    with np.errstate(divide="ignore"):
        precision = 1.0 / variance
    return precision, np.where(precision == 0.0, 0.0, mean * precision)


def _moment(precision: float, weighted: float) -> Tuple[float, float]:
    if precision == 0.0:
        return 0.0, float("inf")
    return float(weighted / precision), float(1.0 / precision)


@dataclass(eq=False)
class MessageState:
    f2x_precision: np.ndarray
    f2x_weighted: np.ndarray
    x2f_precision: np.ndarray
    x2f_weighted: np.ndarray
    iteration: int = 0

    @classmethod
    def from_moments(cls, f2x_mean, f2x_variance, x2f_mean, x2f_variance, iteration: int = 0) -> "MessageState":
        return cls(*to_information(f2x_mean, f2x_variance), *to_information(x2f_mean, x2f_variance), iteration)

    def copy(self) -> "MessageState":
        return MessageState(self.f2x_precision.copy(), self.f2x_weighted.copy(),
                            self.x2f_precision.copy(), self.x2f_weighted.copy(), self.iteration)

    @property
    def f2x_mean(self) -> np.ndarray:
        return to_moments(self.f2x_precision, self.f2x_weighted)[0]

    @property
    def f2x_variance(self) -> np.ndarray:
        return to_moments(self.f2x_precision, self.f2x_weighted)[1]

    @property
    def x2f_mean(self) -> np.ndarray:
        return to_moments(self.x2f_precision, self.x2f_weighted)[0]

    @property
    def x2f_variance(self) -> np.ndarray:
        return to_moments(self.x2f_precision, self.x2f_weighted)[1]

    @property
    def has_x2f(self) -> bool:
        return not bool(np.any(np.isnan(self.x2f_precision)))

    def branch_means(self, graph: FactorGraph) -> np.ndarray:
        """The vector m_f: factor-to-variable means on branch edges."""
        b = graph.branch_edges
        return to_moments(self.f2x_precision[b], self.f2x_weighted[b])[0]

    def f2x(self, graph: FactorGraph, factor: int, variable: int) -> Tuple[float, float]:
        e = graph.edge_id(factor, variable)
        return _moment(self.f2x_precision[e], self.f2x_weighted[e])

    def x2f(self, graph: FactorGraph, variable: int, factor: int) -> Tuple[float, float]:
        q = graph.branch_position[graph.edge_id(factor, variable)]
        if q < 0:
            raise GraphError(f"factor {factor} is a leaf; it receives no messages")
        return _moment(self.x2f_precision[q], self.x2f_weighted[q])

    def validate(self, graph: FactorGraph) -> None:
        if self.f2x_precision.shape != (graph.edge_count,) or self.f2x_weighted.shape != (graph.edge_count,):
            raise MessageStateError("factor-to-variable arrays do not match the graph edges")
        if self.x2f_precision.shape != (graph.dimension,) or self.x2f_weighted.shape != (graph.dimension,):
            raise MessageStateError("variable-to-factor arrays do not match the branch edges")
        if not np.all(np.isfinite(self.f2x_precision) & (self.f2x_precision >= 0) & np.isfinite(self.f2x_weighted)):
            raise MessageStateError("factor-to-variable precisions must be non-negative and finite")
        if self.has_x2f and not np.all(np.isfinite(self.x2f_precision) & (self.x2f_precision >= 0)
                                       & np.isfinite(self.x2f_weighted)):
            raise MessageStateError("variable-to-factor precisions must be non-negative and finite")


def informative_edges(graph: FactorGraph, f2x_precision: np.ndarray) -> np.ndarray:
    """Edges whose message holds at least ``NEGLIGIBLE_SHARE`` of its variable's marginal precision."""
    total = np.bincount(graph.edge_variable, weights=f2x_precision, minlength=graph.variable_count)
    return f2x_precision >= NEGLIGIBLE_SHARE * total[graph.edge_variable]


def leaf_message(graph: FactorGraph, factor: int) -> Tuple[float, float]:
    """Constant message of a degree-1 factor: (z/h, v/h^2)."""
    if graph.degree[factor] != 1:
        raise GraphError(f"factor {factor} has degree {graph.degree[factor]}, not a leaf")
    e = graph.factor_ptr[factor]
    h = graph.edge_coefficient[e]
    return float(graph.observations[factor] / h), float(graph.variances[factor] / h**2)


def leaf_messages(graph: FactorGraph) -> Tuple[np.ndarray, np.ndarray]:
    e = graph.leaf_edges
    f = graph.edge_factor[e]
    h = graph.edge_coefficient[e]
    return graph.observations[f] / h, graph.variances[f] / h**2


def leaf_information(graph: FactorGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Leaf messages as (h^2/v, h z/v)."""
    e = graph.leaf_edges
    f = graph.edge_factor[e]
    h = graph.edge_coefficient[e]
    v = graph.variances[f]
    return h**2 / v, h * graph.observations[f] / v


def init_messages(
    graph: FactorGraph,
    prior_mean: Optional[float] = None,
    prior_variance: Optional[float] = None,
    warm: Optional[MessageState] = None,
) -> MessageState:
    """Branch factor messages start at (prior_mean, prior_variance), leaf
    messages at their constants; ``warm`` reuses a previous state instead."""
    graph.require_determined()
    if warm is not None:
        state = refresh_leaf_messages(graph, warm)
        state.validate(graph)
        return state
    prior_mean = settings.prior_mean if prior_mean is None else prior_mean
    prior_variance = settings.prior_variance if prior_variance is None else prior_variance
    if not (prior_variance > 0 and np.isfinite(prior_variance)):
        raise MessageStateError(f"prior variance must be positive and finite, got {prior_variance}")
    precision = 1.0 / float(prior_variance)
    f2x_precision = np.full(graph.edge_count, precision)
    f2x_weighted = np.full(graph.edge_count, float(prior_mean) * precision)
    f2x_precision[graph.leaf_edges], f2x_weighted[graph.leaf_edges] = leaf_information(graph)
    d = graph.dimension
    return MessageState(f2x_precision, f2x_weighted, np.full(d, np.nan), np.full(d, np.nan), 0)


def refresh_leaf_messages(graph: FactorGraph, state: MessageState) -> MessageState:
    """Copy of ``state`` with leaf messages recomputed from the graph's (z, v)."""
    fresh = state.copy()
    fresh.f2x_precision[graph.leaf_edges], fresh.f2x_weighted[graph.leaf_edges] = leaf_information(graph)
    return fresh


def variable_to_factor(graph: FactorGraph, state: MessageState, variable: int, factor: int) -> Tuple[float, float]:
    target = graph.edge_id(factor, variable)
    incoming = graph.variable_edges(variable)
    incoming = incoming[incoming != target]
    if incoming.size == 0:
        raise UnderdeterminedVariableError([variable])
    return _moment(state.f2x_precision[incoming].sum(), state.f2x_weighted[incoming].sum())


def _spread_terms(h: np.ndarray, x2f_precision: np.ndarray) -> np.ndarray:
    """h^2 times the incoming variances; inf where an input has zero precision."""
    with np.errstate(over="ignore"):
        return np.divide(h**2, x2f_precision, out=np.full(h.shape, np.inf), where=x2f_precision > 0)


def factor_to_variable(graph: FactorGraph, state: MessageState, factor: int, variable: int) -> Tuple[float, float]:
    if not graph.is_branch[factor]:
        raise GraphError(f"factor {factor} is a leaf; use leaf_message")
    target = graph.edge_id(factor, variable)
    others = graph.factor_edges(factor)
    others = others[others != target]
    q = graph.branch_position[others]
    h = graph.edge_coefficient[others]
    h_ij = graph.edge_coefficient[target]
    terms = _spread_terms(h, state.x2f_precision[q])
    spread = graph.variances[factor] + terms.sum()
    if not np.isfinite(spread):
        return _moment(0.0, 0.0)
    pull = ((state.x2f_weighted[q] / h) * (terms / spread)).sum()
    return _moment(h_ij**2 / spread, h_ij * (graph.observations[factor] / spread - pull))


def variables_to_factors(graph: FactorGraph, f2x_precision: np.ndarray, f2x_weighted: np.ndarray):
    """All variable-to-factor messages from one factor-to-variable snapshot."""
    target, source = graph.variable_pairs
    d = graph.dimension
    precision = np.bincount(target, weights=f2x_precision[source], minlength=d)
    weighted = np.bincount(target, weights=f2x_weighted[source], minlength=d)
    return precision, weighted


def _spread(graph: FactorGraph, x2f_precision: np.ndarray):
    """Per branch edge: the terms h^2 v_{x->f} and v_i plus the sum over the factor's other edges."""
    target, source = graph.factor_pairs
    b = graph.branch_edges
    terms = _spread_terms(graph.edge_coefficient[b], x2f_precision)
    spread = graph.variances[graph.edge_factor[b]] + np.bincount(target, weights=terms[source],
                                                                 minlength=graph.dimension)
    return terms, spread


def factor_to_variable_precisions(graph: FactorGraph, x2f_precision: np.ndarray) -> np.ndarray:
    _, spread = _spread(graph, x2f_precision)
    return graph.edge_coefficient[graph.branch_edges] ** 2 / spread


def factors_to_variables(graph: FactorGraph, x2f_precision: np.ndarray, x2f_weighted: np.ndarray):
    """All branch factor-to-variable messages from one variable-to-factor snapshot.

    The pull of each input on the mean is scaled by its share of the spread,
    which stays within [0, 1] however small the input precision gets.
    """
    target, source = graph.factor_pairs
    b = graph.branch_edges
    h = graph.edge_coefficient[b]
    terms, spread = _spread(graph, x2f_precision)
    bounded = np.isfinite(spread)
    with np.errstate(invalid="ignore"):
        share = np.divide(terms[source], spread[target], out=np.zeros(source.size), where=bounded[target])
    pull = np.bincount(target, weights=(x2f_weighted / h)[source] * share, minlength=graph.dimension)
    precision = h**2 / spread
    with np.errstate(invalid="ignore"):
        weighted = np.where(bounded, h * (graph.observations[graph.edge_factor[b]] / spread - pull), 0.0)
    return precision, weighted


def precision_step(graph: FactorGraph, f2x_precision: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Precision halves of one global iteration: returns (f2x precisions, x2f precisions)."""
    target, source = graph.variable_pairs
    x2f_precision = np.bincount(target, weights=f2x_precision[source], minlength=graph.dimension)
    updated = f2x_precision.copy()
    updated[graph.branch_edges] = factor_to_variable_precisions(graph, x2f_precision)
    return updated, x2f_precision


class DampingSettings(BaseModel):
    """Randomized damping of branch factor-to-variable means."""

    weight: float = Field(..., gt=0, lt=1, description="zeta")
    probability: float = Field(..., ge=0, le=1, description="p")
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    resample: bool = Field(False, description="draw a fresh mask every iteration")
    scope: Literal["all", "global", "local"] = "all"


@dataclass(eq=False)
class DampingConfig:
    """Damping weight, probability and the per-branch-edge Bernoulli mask q."""

    weight: float
    probability: float
    mask: np.ndarray
    seed: Optional[int] = None
    resample: bool = False
    scope: Literal["all", "global", "local"] = "all"
    rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"damping weight must lie in [0, 1], got {self.weight}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"damping probability must lie in [0, 1], got {self.probability}")
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @classmethod
    def create(cls, graph: FactorGraph, weight: float, probability: float, seed: Optional[int] = None,
               resample: bool = False, scope: str = "all") -> "DampingConfig":
        rng = np.random.default_rng(seed)
        mask = rng.random(graph.dimension) < probability
        return cls(weight, probability, mask, seed, resample, scope, rng)

    @classmethod
    def from_settings(cls, graph: FactorGraph, damping: DampingSettings, seed: Optional[int] = None) -> "DampingConfig":
        return cls.create(graph, damping.weight, damping.probability,
                          damping.seed if damping.seed is not None else seed,
                          damping.resample, damping.scope)

    def applies(self, phase: str) -> bool:
        return self.scope == "all" or self.scope == phase

    def next_mask(self) -> np.ndarray:
        if self.resample:
            self.mask = self.rng.random(self.mask.size) < self.probability
        return self.mask

    def blend(self, previous: np.ndarray, current: np.ndarray) -> np.ndarray:
        q = self.next_mask()
        damped = (1.0 - self.weight) * current + self.weight * previous
        return np.where(q, damped, current)


def apply_damping(config: DampingConfig, previous_mean: float, current_mean: float, edge: int) -> float:
    """(1-q) * current + q * [(1-zeta) * current + zeta * previous] for branch position ``edge``."""
    q = float(config.mask[edge])
    zeta = config.weight
    return (1.0 - q) * current_mean + q * ((1.0 - zeta) * current_mean + zeta * previous_mean)


def compute_marginals(graph: FactorGraph, state: MessageState) -> Tuple[np.ndarray, np.ndarray]:
    n = graph.variable_count
    total = np.bincount(graph.edge_variable, weights=state.f2x_precision, minlength=n)
    weighted = np.bincount(graph.edge_variable, weights=state.f2x_weighted, minlength=n)
    with np.errstate(divide="ignore", invalid="ignore"):
        return weighted / total, 1.0 / total


def _carry(previous: MessageState, b: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """Previous branch means weighted by the new precisions."""
    before = previous.f2x_precision[b]
    with np.errstate(over="ignore"):
        ratio = np.divide(precision, before, out=np.zeros_like(precision), where=before > 0)
    return previous.f2x_weighted[b] * np.where(np.isfinite(ratio), ratio, 0.0)


def _iterate(graph: FactorGraph, state: MessageState, damping: Optional[DampingConfig], phase: str) -> MessageState:
    x2f_precision, x2f_weighted = variables_to_factors(graph, state.f2x_precision, state.f2x_weighted)
    precision, weighted = factors_to_variables(graph, x2f_precision, x2f_weighted)
    b = graph.branch_edges
    if damping is not None and damping.applies(phase):
        weighted = damping.blend(_carry(state, b, precision), weighted)
    f2x_precision = state.f2x_precision.copy()
    f2x_weighted = state.f2x_weighted.copy()
    f2x_precision[b] = precision
    f2x_weighted[b] = weighted
    return MessageState(f2x_precision, f2x_weighted, x2f_precision, x2f_weighted, state.iteration + 1)


def global_iteration(graph: FactorGraph, state: MessageState, damping: Optional[DampingConfig] = None) -> MessageState:
    return _iterate(graph, state, damping, "global")


def local_iteration(view: FreezeView, state: MessageState, damping: Optional[DampingConfig] = None) -> MessageState:
    """Global iteration with tie-factor messages pinned to the freeze snapshot."""
    if not view.active:
        raise MessageStateError("local iteration needs an active freeze view")
    updated = _iterate(view.graph, state, damping, "local")
    updated.f2x_precision[view.tie_edges] = view.snapshot_precision
    updated.f2x_weighted[view.tie_edges] = view.snapshot_weighted
    return updated


class TraceWriter:
    """Per-iteration CSV dump ``iteration,edge_kind,factor,variable,mean,variance``."""

    header = ["iteration", "edge_kind", "factor", "variable", "mean", "variance"]

    def __init__(self, path):
        self.path = str(path)
        self._file = open(self.path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(self.header)

    def record(self, graph: FactorGraph, state: MessageState) -> None:
        k = state.iteration
        b = graph.branch_edges
        if state.has_x2f:
            x2f_mean, x2f_variance = state.x2f_mean, state.x2f_variance
            for q, e in enumerate(b):
                self._writer.writerow([k, "x2f", int(graph.edge_factor[e]), int(graph.edge_variable[e]),
                                       format(x2f_mean[q], ".17g"), format(x2f_variance[q], ".17g")])
        f2x_mean, f2x_variance = state.f2x_mean, state.f2x_variance
        for e in range(graph.edge_count):
            self._writer.writerow([k, "f2x", int(graph.edge_factor[e]), int(graph.edge_variable[e]),
                                   format(f2x_mean[e], ".17g"), format(f2x_variance[e], ".17g")])

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
