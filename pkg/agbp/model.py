"""Sparse linear models z = Hx + u and their cluster partitions."""
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from agbp.errors import ModelValidationError

Entry = Tuple[int, int, float]


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Coefficient triplets of H with observations z and variances v.

    Entries are kept sorted by (row, col). ``home_cluster`` records, per row,
    the cluster block the row was generated in; loaded models carry ``None``.
    """

    rows: int
    cols: int
    row_index: np.ndarray
    col_index: np.ndarray
    coefficients: np.ndarray
    observations: np.ndarray
    variances: np.ndarray
    home_cluster: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        row_index = np.asarray(self.row_index, dtype=np.int64).ravel()
        col_index = np.asarray(self.col_index, dtype=np.int64).ravel()
        coefficients = np.asarray(self.coefficients, dtype=np.float64).ravel()
        order = np.lexsort((col_index, row_index))
        object.__setattr__(self, "row_index", row_index[order])
        object.__setattr__(self, "col_index", col_index[order])
        object.__setattr__(self, "coefficients", coefficients[order])
        object.__setattr__(self, "observations", np.asarray(self.observations, dtype=np.float64).ravel())
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64).ravel())
        if self.home_cluster is not None:
            object.__setattr__(self, "home_cluster", np.asarray(self.home_cluster, dtype=np.int64).ravel())
        self.validate()

    @classmethod
    def from_entries(
        cls,
        rows: int,
        cols: int,
        entries: Iterable[Entry],
        observations: Sequence[float],
        variances: Sequence[float],
        home_cluster: Optional[Sequence[int]] = None,
    ) -> "LinearModel":
        entries = list(entries)
        if entries:
            r, c, h = zip(*entries)
        else:
            r, c, h = (), (), ()
        return cls(rows, cols, np.array(r, dtype=np.int64), np.array(c, dtype=np.int64),
                   np.array(h, dtype=np.float64), observations, variances,
                   None if home_cluster is None else np.asarray(home_cluster))

    @classmethod
    def from_dense(cls, matrix, observations, variances, home_cluster=None) -> "LinearModel":
        dense = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        r, c = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], r, c, dense[r, c], observations, variances, home_cluster)

    def validate(self) -> None:
        m, n = self.rows, self.cols
        if m < 1 or n < 1:
            raise ModelValidationError(f"model dimensions must be positive, got {m}x{n}")
        if not (len(self.row_index) == len(self.col_index) == len(self.coefficients)):
            raise ModelValidationError("row, column and coefficient arrays differ in length")
        if len(self.row_index):
            if self.row_index.min() < 0 or self.row_index.max() >= m:
                raise ModelValidationError(f"row index out of range [0, {m})")
            if self.col_index.min() < 0 or self.col_index.max() >= n:
                raise ModelValidationError(f"column index out of range [0, {n})")
            same = (np.diff(self.row_index) == 0) & (np.diff(self.col_index) == 0)
            if same.any():
                k = int(np.flatnonzero(same)[0])
                raise ModelValidationError(
                    f"duplicate entry ({self.row_index[k]}, {self.col_index[k]})")
        if not np.all(np.isfinite(self.coefficients)) or np.any(self.coefficients == 0.0):
            raise ModelValidationError("coefficients must be finite and nonzero")
        if self.observations.shape != (m,):
            raise ModelValidationError(f"expected {m} observations, got {self.observations.shape[0]}")
        if self.variances.shape != (m,):
            raise ModelValidationError(f"expected {m} variances, got {self.variances.shape[0]}")
        if not np.all(np.isfinite(self.observations)):
            raise ModelValidationError("observations must be finite")
        bad = np.flatnonzero(~(self.variances > 0) | ~np.isfinite(self.variances))
        if bad.size:
            raise ModelValidationError(f"variance of row {bad[0]} must be positive and finite")
        empty = np.flatnonzero(np.bincount(self.row_index, minlength=m) == 0)
        if empty.size:
            raise ModelValidationError(f"row {empty[0]} has no nonzero entry")
        if self.home_cluster is not None and self.home_cluster.shape != (m,):
            raise ModelValidationError("home_cluster must have one entry per row")

    @property
    def nnz(self) -> int:
        return int(self.coefficients.size)

    @property
    def entries(self) -> list:
        return [(int(r), int(c), float(h))
                for r, c, h in zip(self.row_index, self.col_index, self.coefficients)]

    def to_sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.coefficients, (self.row_index, self.col_index)),
                             shape=(self.rows, self.cols))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def with_observations(self, observations=None, variances=None) -> "LinearModel":
        return LinearModel(
            self.rows, self.cols, self.row_index, self.col_index, self.coefficients,
            self.observations if observations is None else observations,
            self.variances if variances is None else variances,
            self.home_cluster,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearModel):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.row_index, other.row_index)
            and np.array_equal(self.col_index, other.col_index)
            and np.array_equal(self.coefficients, other.coefficients)
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.variances, other.variances)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    cluster_count: int
    assignment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "assignment", np.asarray(self.assignment, dtype=np.int64).ravel())
        self.validate()

    def validate(self) -> None:
        s = self.cluster_count
        if s < 1:
            raise ModelValidationError(f"cluster_count must be >= 1, got {s}")
        if self.assignment.size == 0:
            raise ModelValidationError("partition assigns no variables")
        if self.assignment.min() < 0 or self.assignment.max() >= s:
            raise ModelValidationError(f"cluster ids must lie in [0, {s})")
        sizes = np.bincount(self.assignment, minlength=s)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise ModelValidationError(f"cluster {empty[0]} owns no variable")

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> "ClusterPartition":
        """Blocks of consecutive variables, ``sizes[i]`` of them in cluster i."""
        return cls(len(sizes), np.repeat(np.arange(len(sizes)), sizes))

    @classmethod
    def single(cls, n: int) -> "ClusterPartition":
        return cls(1, np.zeros(n, dtype=np.int64))

    @property
    def variable_count(self) -> int:
        return int(self.assignment.size)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.cluster_count)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)

    def relabel(self, permutation: Sequence[int]) -> "ClusterPartition":
        """Cluster ``c`` becomes ``permutation[c]``."""
        return ClusterPartition(self.cluster_count, np.asarray(permutation)[self.assignment])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClusterPartition):
            return NotImplemented
        return self.cluster_count == other.cluster_count and np.array_equal(self.assignment, other.assignment)

    __hash__ = None


def _block_shape(block) -> Optional[Tuple[int, int]]:
    if block is None:
        return None
    if sp.issparse(block):
        return block.shape
    return np.atleast_2d(np.asarray(block, dtype=float)).shape


def assemble_global(
    blocks: Sequence[Sequence],
    observations: Optional[Sequence[float]] = None,
    variances: Optional[Sequence[float]] = None,
) -> LinearModel:
    """Stack internal blocks ``blocks[i][i]`` and tie blocks ``blocks[i][j]`` into one model.

    ``None`` stands for an all-zero tie block. Row r of cluster i maps to global
    row sum_{j<i} m_j + r, columns likewise. Observations default to zero and
    variances to one.
    """
    s = len(blocks)
    if s == 0:
        raise ModelValidationError("no blocks given")
    for i, row in enumerate(blocks):
        if len(row) != s:
            raise ModelValidationError(f"block row {i} has {len(row)} blocks, expected {s}")
    internal = []
    for i in range(s):
        shape = _block_shape(blocks[i][i])
        if shape is None:
            raise ModelValidationError(f"internal block H_c{i + 1} is missing")
        internal.append(shape)
    row_sizes = [shape[0] for shape in internal]
    col_sizes = [shape[1] for shape in internal]

    grid = []
    for i in range(s):
        grid_row = []
        for j in range(s):
            shape = _block_shape(blocks[i][j])
            if shape is None:
                grid_row.append(sp.coo_matrix((row_sizes[i], col_sizes[j])))
                continue
            if shape != (row_sizes[i], col_sizes[j]):
                name = f"H_c{i + 1}" if i == j else f"H_c{i + 1},c{j + 1}"
                raise ModelValidationError(
                    f"block {name} has shape {shape}, expected ({row_sizes[i]}, {col_sizes[j]})")
            block = blocks[i][j]
            grid_row.append(sp.coo_matrix(block if sp.issparse(block) else np.atleast_2d(np.asarray(block, dtype=float))))
        grid.append(grid_row)

    stacked = sp.bmat(grid, format="csr")
    stacked.eliminate_zeros()
    stacked = stacked.tocoo()
    m, n = sum(row_sizes), sum(col_sizes)
    z = np.zeros(m) if observations is None else observations
    v = np.ones(m) if variances is None else variances
    home = np.repeat(np.arange(s), row_sizes)
    return LinearModel(m, n, stacked.row, stacked.col, stacked.data, z, v, home)
