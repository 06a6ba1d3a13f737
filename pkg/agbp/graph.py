"""Factor graphs of linear models, internal/tie classification and tie freezing.

Edges are numbered in lexicographic (factor, variable) order. Branch edges
(edges of factors with degree > 1) get a second, dense numbering
``0..d-1`` in the same order; factor-to-variable means on branch edges form
the vector the convergence analysis works on, and variable-to-factor messages
exist only on branch edges.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from agbp.config import get_logger
from agbp.errors import GraphError, MessageStateError, UnderdeterminedVariableError
from agbp.model import ClusterPartition, LinearModel

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class FactorGraph:
    variable_count: int
    factor_count: int
    edge_factor: np.ndarray
    edge_variable: np.ndarray
    edge_coefficient: np.ndarray
    factor_ptr: np.ndarray
    observations: np.ndarray
    variances: np.ndarray
    degree: np.ndarray
    is_branch: np.ndarray
    branch_edges: np.ndarray
    leaf_edges: np.ndarray
    branch_position: np.ndarray
    # (target branch position, source edge): edges feeding a variable-to-factor message
    variable_pairs: Tuple[np.ndarray, np.ndarray]
    # (target branch position, source branch position): edges feeding a factor-to-variable message
    factor_pairs: Tuple[np.ndarray, np.ndarray]
    underdetermined: np.ndarray
    home_cluster: Optional[np.ndarray] = field(default=None)

    @property
    def edge_count(self) -> int:
        return int(self.edge_factor.size)

    @property
    def branch_count(self) -> int:
        return int(self.is_branch.sum())

    @property
    def leaf_count(self) -> int:
        return self.factor_count - self.branch_count

    @property
    def dimension(self) -> int:
        """d = sum of branch factor degrees."""
        return int(self.branch_edges.size)

    def factor_edges(self, factor: int) -> np.ndarray:
        return np.arange(self.factor_ptr[factor], self.factor_ptr[factor + 1])

    def variable_edges(self, variable: int) -> np.ndarray:
        return np.flatnonzero(self.edge_variable == variable)

    def edge_id(self, factor: int, variable: int) -> int:
        lo, hi = self.factor_ptr[factor], self.factor_ptr[factor + 1]
        k = lo + int(np.searchsorted(self.edge_variable[lo:hi], variable))
        if k >= hi or self.edge_variable[k] != variable:
            raise GraphError(f"factor {factor} is not adjacent to variable {variable}")
        return k

    def require_determined(self) -> None:
        if self.underdetermined.size:
            raise UnderdeterminedVariableError(self.underdetermined.tolist())

    def with_observation(self, factor: int, observation: float, variance: float) -> "FactorGraph":
        """Copy with row ``factor``'s (z, v) replaced; structure arrays are shared."""
        if not 0 <= factor < self.factor_count:
            raise GraphError(f"unknown factor {factor}")
        z = self.observations.copy()
        v = self.variances.copy()
        z[factor], v[factor] = observation, variance
        return replace(self, observations=z, variances=v)

    def with_observations(self, observations=None, variances=None) -> "FactorGraph":
        z = self.observations if observations is None else np.asarray(observations, dtype=np.float64)
        v = self.variances if variances is None else np.asarray(variances, dtype=np.float64)
        if z.shape != (self.factor_count,) or v.shape != (self.factor_count,):
            raise GraphError("observation arrays must have one entry per factor")
        return replace(self, observations=z, variances=v)

    def to_model(self) -> LinearModel:
        return LinearModel(self.factor_count, self.variable_count, self.edge_factor, self.edge_variable,
                           self.edge_coefficient, self.observations, self.variances, self.home_cluster)

    def same_structure(self, other: "FactorGraph") -> bool:
        return (
            self.variable_count == other.variable_count
            and self.factor_count == other.factor_count
            and np.array_equal(self.edge_factor, other.edge_factor)
            and np.array_equal(self.edge_variable, other.edge_variable)
            and np.array_equal(self.edge_coefficient, other.edge_coefficient)
        )


def _exclusive_pairs(group: np.ndarray, targets: np.ndarray, members: np.ndarray):
    """All (t, s) with group[t] == group[s] and t != s, t drawn from ``targets``
    and s from ``members``; both index the same edge numbering. Ordered by t, then s."""
    order = np.argsort(group[members], kind="stable")
    sorted_members = members[order]
    sorted_groups = group[sorted_members]
    target_groups = group[targets]
    lo = np.searchsorted(sorted_groups, target_groups, side="left")
    hi = np.searchsorted(sorted_groups, target_groups, side="right")
    counts = hi - lo
    t = np.repeat(targets, counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    s = sorted_members[np.repeat(lo, counts) + offsets]
    keep = t != s
    return t[keep], s[keep]


def build_factor_graph(model: LinearModel) -> FactorGraph:
    """One factor node per row of H, adjacent to the row's nonzero columns."""
    m, n = model.rows, model.cols
    edge_factor = model.row_index.copy()
    edge_variable = model.col_index.copy()
    degree = np.bincount(edge_factor, minlength=m)
    factor_ptr = np.concatenate([[0], np.cumsum(degree)])
    is_branch = degree > 1

    edge_is_branch = is_branch[edge_factor]
    branch_edges = np.flatnonzero(edge_is_branch)
    leaf_edges = np.flatnonzero(~edge_is_branch)
    branch_position = np.full(edge_factor.size, -1, dtype=np.int64)
    branch_position[branch_edges] = np.arange(branch_edges.size)

    all_edges = np.arange(edge_factor.size)
    vt, vs = _exclusive_pairs(edge_variable, branch_edges, all_edges)
    ft, fs = _exclusive_pairs(edge_factor, branch_edges, branch_edges)
    variable_pairs = (branch_position[vt], vs)
    factor_pairs = (branch_position[ft], branch_position[fs])

    variable_degree = np.bincount(edge_variable, minlength=n)
    lonely = np.setdiff1d(np.arange(branch_edges.size), variable_pairs[0])
    underdetermined = np.union1d(edge_variable[branch_edges[lonely]], np.flatnonzero(variable_degree == 0))

    graph = FactorGraph(
        variable_count=n,
        factor_count=m,
        edge_factor=edge_factor,
        edge_variable=edge_variable,
        edge_coefficient=model.coefficients.copy(),
        factor_ptr=factor_ptr,
        observations=model.observations.copy(),
        variances=model.variances.copy(),
        degree=degree,
        is_branch=is_branch,
        branch_edges=branch_edges,
        leaf_edges=leaf_edges,
        branch_position=branch_position,
        variable_pairs=variable_pairs,
        factor_pairs=factor_pairs,
        underdetermined=underdetermined.astype(np.int64),
        home_cluster=None if model.home_cluster is None else model.home_cluster.copy(),
    )
    logger.debug("factor graph: %d variables, %d factors (%d branch, %d leaf), d=%d",
                 n, m, graph.branch_count, graph.leaf_count, graph.dimension)
    if underdetermined.size:
        logger.warning("factor graph has %d underdetermined variable(s)", underdetermined.size)
    return graph


@dataclass(frozen=True, eq=False)
class FactorClassification:
    is_tie: np.ndarray
    factor_cluster: np.ndarray
    lambda_counts: np.ndarray
    gamma_counts: np.ndarray

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(~self.is_tie)

    @property
    def tie(self) -> np.ndarray:
        return np.flatnonzero(self.is_tie)

    @property
    def tie_count(self) -> int:
        """g = |T|."""
        return int(self.is_tie.sum())

    def tie_edge_mask(self, graph: FactorGraph) -> np.ndarray:
        return self.is_tie[graph.edge_factor]

    def tie_edge_count(self, graph: FactorGraph) -> int:
        """e = sum of tie factor degrees."""
        return int(graph.degree[self.is_tie].sum())


def classify_factors(graph: FactorGraph, partition: ClusterPartition) -> FactorClassification:
    """A factor is tie iff its variables span two or more clusters.

    Edges are attributed to the factor's home cluster: its generated row block
    when known and within the partition's cluster range, otherwise the majority cluster among its variables (lowest id
    on ties). Internal factors add their edges to lambda, tie factors to gamma.
    """
    if partition.variable_count != graph.variable_count:
        raise GraphError(f"partition covers {partition.variable_count} variables, graph has {graph.variable_count}")
    s = partition.cluster_count
    m = graph.factor_count
    edge_cluster = partition.assignment[graph.edge_variable]
    starts = graph.factor_ptr[:-1]
    is_tie = np.minimum.reduceat(edge_cluster, starts) != np.maximum.reduceat(edge_cluster, starts)

    if graph.home_cluster is not None and graph.home_cluster.max() < s:
        factor_cluster = graph.home_cluster.copy()
    else:
        counts = np.bincount(graph.edge_factor * s + edge_cluster, minlength=m * s).reshape(m, s)
        factor_cluster = counts.argmax(axis=1)

    edges_per_factor = graph.degree
    lambda_counts = np.bincount(factor_cluster[~is_tie], weights=edges_per_factor[~is_tie], minlength=s)
    gamma_counts = np.bincount(factor_cluster[is_tie], weights=edges_per_factor[is_tie], minlength=s)
    return FactorClassification(
        is_tie=is_tie,
        factor_cluster=factor_cluster.astype(np.int64),
        lambda_counts=lambda_counts.astype(np.int64),
        gamma_counts=gamma_counts.astype(np.int64),
    )


@dataclass(eq=False)
class FreezeView:
    """Tie factors collapsed into leaf factors emitting a message snapshot.

    ``tie_edges`` are edge ids of tie-factor edges; ``snapshot_precision`` and
    ``snapshot_weighted`` hold their factor-to-variable messages at freeze time.
    """

    graph: FactorGraph
    tie_edges: np.ndarray
    snapshot_precision: np.ndarray
    snapshot_weighted: np.ndarray
    tie_factor_count: int
    active: bool = True

    @property
    def effective_branch_count(self) -> int:
        """b - g while frozen."""
        return self.graph.branch_count - (self.tie_factor_count if self.active else 0)

    @property
    def effective_leaf_count(self) -> int:
        """l + e while frozen."""
        return self.graph.leaf_count + (int(self.tie_edges.size) if self.active else 0)

    def snapshot(self) -> dict:
        """{(factor, variable): (mean, variance)} for every frozen edge; (0, inf) when uninformative."""
        g = self.graph
        frozen = {}
        for e, p, w in zip(self.tie_edges, self.snapshot_precision, self.snapshot_weighted):
            key = (int(g.edge_factor[e]), int(g.edge_variable[e]))
            frozen[key] = (float(w / p), float(1.0 / p)) if p > 0 else (0.0, float("inf"))
        return frozen


def freeze_tie_factors(graph: FactorGraph, messages, classification: FactorClassification) -> FreezeView:
    tie_edges = np.flatnonzero(classification.tie_edge_mask(graph))
    precision = messages.f2x_precision[tie_edges]
    weighted = messages.f2x_weighted[tie_edges]
    missing = ~(np.isfinite(precision) & np.isfinite(weighted) & (precision >= 0))
    if missing.any():
        e = tie_edges[np.flatnonzero(missing)[0]]
        raise MessageStateError(
            f"no message on tie edge (factor {graph.edge_factor[e]}, variable {graph.edge_variable[e]})")
    return FreezeView(graph, tie_edges, precision.copy(), weighted.copy(), classification.tie_count)


def defreeze(view: FreezeView) -> FactorGraph:
    view.active = False
    return view.graph
