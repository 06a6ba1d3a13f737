"""Randomized clustered test instances.

Every cluster owns ``rows_per_cluster`` rows and ``cols_per_cluster`` variables.
Nonzero entries are i.i.d. Uniform[0, 1); each candidate off-diagonal position
is kept independently with a probability chosen so the expected number of
internal (tie) edges per cluster row block equals ``internal_edges``
(``tie_edges``). Square kinds put h_ii = sum_{j != i} h_ij + delta on the
diagonal, where the sum runs over the whole global row, tie entries included.
"""
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from agbp.config import get_logger
from agbp.errors import ModelValidationError
from agbp.model import ClusterPartition, LinearModel

logger = get_logger(__name__)

MAX_RETRIES = 100


class VarianceScheme(BaseModel):
    """Observation variances: ``independent`` for core rows, ``dependent`` for
    the extra rows of rectangular models (defaults to ``independent``)."""

    independent: float = Field(1.0, gt=0)
    dependent: Optional[float] = Field(None, gt=0)

    def dependent_value(self) -> float:
        return self.independent if self.dependent is None else self.dependent


class GeneratorSpec(BaseModel):
    cluster_count: int = Field(..., ge=1, description="number of clusters s")
    rows_per_cluster: int = Field(..., ge=1, description="m_c")
    cols_per_cluster: int = Field(..., ge=1, description="n_c")
    internal_edges: float = Field(..., ge=0, description="expected internal edges per cluster")
    tie_edges: float = Field(0.0, ge=0, description="expected tie edges per cluster")
    matrix_kind: Literal["symmetric", "nonsymmetric", "rectangular"] = "symmetric"
    diagonal_increment: float = Field(0.01, ge=0)
    variances: VarianceScheme = Field(default_factory=VarianceScheme)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_shape(self):
        m, n, s = self.rows_per_cluster, self.cols_per_cluster, self.cluster_count
        if self.matrix_kind in ("symmetric", "nonsymmetric") and m != n:
            raise ValueError(f"{self.matrix_kind} models need rows_per_cluster == cols_per_cluster, got {m} and {n}")
        if self.matrix_kind == "rectangular" and m <= n:
            raise ValueError(f"rectangular models need rows_per_cluster > cols_per_cluster, got {m} and {n}")
        if self.internal_edges > m * n:
            raise ValueError(f"internal_edges {self.internal_edges} exceeds m_c*n_c = {m * n}")
        if self.tie_edges > m * n * (s - 1):
            raise ValueError(f"tie_edges {self.tie_edges} exceeds m_c*n_c*(s-1) = {m * n * (s - 1)}")
        return self

    @property
    def variable_count(self) -> int:
        return self.cluster_count * self.cols_per_cluster

    @property
    def row_count(self) -> int:
        return self.cluster_count * self.rows_per_cluster


def _probability(expected: float, candidates: int) -> float:
    if candidates <= 0:
        return 0.0
    return min(1.0, expected / candidates)


class _Layout:
    """Per-position inclusion probabilities for one spec."""

    def __init__(self, spec: GeneratorSpec):
        s, m_c, n_c = spec.cluster_count, spec.rows_per_cluster, spec.cols_per_cluster
        self.m, self.n = s * m_c, s * n_c
        self.row_cluster = np.repeat(np.arange(s), m_c)
        self.col_cluster = np.repeat(np.arange(s), n_c)
        local_row = np.tile(np.arange(m_c), s)
        self.core = local_row < n_c
        # Core row r of cluster i carries its diagonal on column i*n_c + r.
        self.diagonal_col = np.where(self.core, self.row_cluster * n_c + local_row, -1)

        # Every row, core or extra, expects internal_edges/m_c internal edges.
        p_core = _probability(spec.internal_edges / m_c, n_c - 1)
        p_extra = _probability(spec.internal_edges / m_c, n_c)
        p_tie = _probability(spec.tie_edges, m_c * n_c * (s - 1))

        same = self.row_cluster[:, None] == self.col_cluster[None, :]
        p_internal = np.where(self.core, p_core, p_extra)[:, None]
        self.p = np.where(same, p_internal, p_tie)
        core_rows = np.flatnonzero(self.core)
        self.p[core_rows, self.diagonal_col[core_rows]] = 0.0


def _sample_values(rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    values = np.zeros(mask.shape)
    values[mask] = rng.random(int(mask.sum()))
    return values


def _apply_diagonal(off: np.ndarray, layout: _Layout, delta: float) -> np.ndarray:
    full = off.copy()
    rows = np.flatnonzero(layout.core)
    full[rows, layout.diagonal_col[rows]] = off[rows].sum(axis=1) + delta
    return full


def _zero_rows(full: np.ndarray) -> np.ndarray:
    return np.flatnonzero(~(full != 0).any(axis=1))


def _dangling_columns(full: np.ndarray) -> np.ndarray:
    """Columns whose single nonzero lies on a branch row (the variable could
    send no message back to that factor)."""
    nz = full != 0
    col_count = nz.sum(axis=0)
    row_degree = nz.sum(axis=1)
    single = np.flatnonzero(col_count == 1)
    if single.size == 0:
        return single
    owner = nz[:, single].argmax(axis=0)
    return single[row_degree[owner] > 1]


def _sample_symmetric(spec: GeneratorSpec, layout: _Layout, rng: np.random.Generator) -> np.ndarray:
    n = layout.n
    upper_r, upper_c = np.triu_indices(n, 1)
    keep = rng.random(upper_r.size) < layout.p[upper_r, upper_c]
    off = np.zeros((n, n))
    values = rng.random(int(keep.sum()))
    off[upper_r[keep], upper_c[keep]] = values
    off[upper_c[keep], upper_r[keep]] = values

    delta = spec.diagonal_increment
    for row in _zero_rows(_apply_diagonal(off, layout, delta)):
        if off[row].any():
            # filled in meanwhile through the mirror of an earlier redraw
            continue
        for _ in range(MAX_RETRIES):
            keep_row = rng.random(n) < layout.p[row]
            if keep_row.any():
                redraw = _sample_values(rng, keep_row)
                off[row, :] = redraw
                off[:, row] = redraw
                break
        else:
            raise ModelValidationError(f"row {row} stayed empty after {MAX_RETRIES} regenerations")
    return _apply_diagonal(off, layout, delta)


def _sample_general(spec: GeneratorSpec, layout: _Layout, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(layout.p.shape) < layout.p
    off = _sample_values(rng, keep)
    delta = spec.diagonal_increment

    # Column redraws can empty an extra row again, so both repairs repeat.
    for _ in range(MAX_RETRIES):
        full = _apply_diagonal(off, layout, delta)
        empty = _zero_rows(full)
        dangling = _dangling_columns(full) if empty.size == 0 else empty[:0]
        if empty.size == 0 and dangling.size == 0:
            return full
        for row in empty:
            for _ in range(MAX_RETRIES):
                keep_row = rng.random(layout.n) < layout.p[row]
                if keep_row.any():
                    off[row] = _sample_values(rng, keep_row)
                    break
            else:
                raise ModelValidationError(f"row {row} stayed empty after {MAX_RETRIES} regenerations")
        for col in dangling:
            keep_col = rng.random(layout.m) < layout.p[:, col]
            off[:, col] = _sample_values(rng, keep_col)
    raise ModelValidationError(
        f"rows or columns stayed degenerate after {MAX_RETRIES} regenerations")


def generate_model(spec: GeneratorSpec) -> Tuple[LinearModel, ClusterPartition]:
    """Draw one clustered instance; deterministic given ``spec.seed``.

    Observations follow z = H x_true + noise with x_true ~ Uniform[0, 1)^n and
    noise_i ~ N(0, v_i).
    """
    rng = np.random.default_rng(spec.seed)
    layout = _Layout(spec)
    if spec.matrix_kind == "symmetric":
        dense = _sample_symmetric(spec, layout, rng)
    else:
        dense = _sample_general(spec, layout, rng)

    variances = np.where(layout.core, spec.variances.independent, spec.variances.dependent_value())
    x_true = rng.random(layout.n)
    noise = rng.normal(0.0, np.sqrt(variances))
    observations = dense @ x_true + noise

    rows, cols = np.nonzero(dense)
    model = LinearModel(layout.m, layout.n, rows, cols, dense[rows, cols], observations, variances,
                        layout.row_cluster)
    partition = ClusterPartition(spec.cluster_count, layout.col_cluster)
    logger.debug("generated %s model %dx%d with %d nonzeros (seed=%d)",
                 spec.matrix_kind, model.rows, model.cols, model.nnz, spec.seed)
    return model, partition


def block_edge_counts(model: LinearModel, partition: ClusterPartition) -> Tuple[np.ndarray, np.ndarray]:
    """Off-diagonal nonzeros of each internal block and of each cluster's tie blocks.

    Requires block provenance (``home_cluster``). Diagonal entries of square
    cores are excluded, matching how the generator counts expected edges.
    """
    if model.home_cluster is None:
        raise ModelValidationError("model carries no block provenance")
    s = partition.cluster_count
    home = model.home_cluster[model.row_index]
    target = partition.assignment[model.col_index]
    first_row = np.searchsorted(model.home_cluster, np.arange(s))
    first_col = np.searchsorted(partition.assignment, np.arange(s))
    local_row = model.row_index - first_row[home]
    local_col = model.col_index - first_col[target]
    internal = (home == target) & (local_row != local_col)
    tie = home != target
    return (np.bincount(home[internal], minlength=s), np.bincount(home[tie], minlength=s))
