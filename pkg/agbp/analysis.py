"""Mean-evolution operator, fixed points, spectral radius and the WLS oracle.

The branch factor-to-variable means m_f (lexicographic branch edge order, see
``FactorGraph.branch_edges``) evolve, once the variances sit at their fixed
point v*, through the affine map m' = c_f + Omega m. Everything here is dense
apart from the construction of Omega, which goes through two sparse pair
matrices: A (factor side) and B (variable side), with Omega = (A B)[:, branch].
Messages whose precision settles at zero carry no information; their rows of
Omega and c_f are zero, so the spectrum reflects the informative messages only.
"""
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from agbp.config import get_logger, settings
from agbp.engine import (
    MessageState,
    compute_marginals,
    informative_edges,
    leaf_information,
    leaf_messages,
    precision_step,
    to_moments,
)
from agbp.errors import AnalysisError
from agbp.graph import FactorClassification, FactorGraph
from agbp.model import LinearModel

logger = get_logger(__name__)

VARIANCE_TOLERANCE = 1e-12
VARIANCE_MAX_STEPS = 1_000_000
DENSE_EIGEN_LIMIT = 2000
POWER_TOLERANCE = 1e-8
POWER_MAX_STEPS = 100_000
RANK_TOLERANCE = 1e-12


def wls_solve(model: LinearModel) -> np.ndarray:
    """x = (H^T W H)^-1 H^T W z with W = diag(1/v), via pivoted QR of sqrt(W) H."""
    if model.rows < model.cols:
        raise AnalysisError(f"H is {model.rows}x{model.cols}; it cannot have full column rank")
    weight = 1.0 / np.sqrt(model.variances)
    a = model.to_dense() * weight[:, None]
    b = model.observations * weight
    q, r, perm = scipy.linalg.qr(a, mode="economic", pivoting=True)
    pivots = np.abs(np.diag(r))
    if pivots[-1] <= RANK_TOLERANCE * pivots[0]:
        rank = int(np.sum(pivots > RANK_TOLERANCE * pivots[0]))
        raise AnalysisError(f"H is rank deficient (numerical rank {rank} < {model.cols})")
    x = np.empty(model.cols)
    x[perm] = scipy.linalg.solve_triangular(r, q.T @ b)

    rhs = a.T @ b
    residual = np.max(np.abs(a.T @ (a @ x) - rhs))
    scale = np.max(np.abs(rhs))
    if residual > 1e-8 * scale:
        logger.warning("WLS normal-equation residual %.3e exceeds 1e-8 * %.3e", residual, scale)
    return x


@dataclass(frozen=True, eq=False)
class VarianceFixedPoint:
    """Message precisions at the fixed point; zero precision marks an uninformative message."""

    f2x_precision: np.ndarray
    x2f_precision: np.ndarray
    iterations: int

    @property
    def f2x_variance(self) -> np.ndarray:
        return to_moments(self.f2x_precision, np.zeros_like(self.f2x_precision))[1]

    @property
    def x2f_variance(self) -> np.ndarray:
        return to_moments(self.x2f_precision, np.zeros_like(self.x2f_precision))[1]

    def informative(self, graph: FactorGraph) -> np.ndarray:
        """Branch positions whose factor-to-variable message keeps a positive precision."""
        return self.f2x_precision[graph.branch_edges] > 0


def solve_variance_fixed_point(graph: FactorGraph, initial: Optional[float] = None) -> VarianceFixedPoint:
    """Iterate the precision halves of the message updates until the largest
    relative change among informative messages drops to 1e-12.

    Messages whose variance grows without bound fall below ``NEGLIGIBLE_SHARE``
    of their variable's precision; they settle at zero precision.
    """
    graph.require_determined()
    start = settings.prior_variance if initial is None else initial
    if not start > 0:
        raise AnalysisError(f"initial variance must be positive, got {start}")
    f2x = np.full(graph.edge_count, 1.0 / float(start))
    f2x[graph.leaf_edges] = leaf_information(graph)[0]
    for step in range(1, VARIANCE_MAX_STEPS + 1):
        updated, x2f = precision_step(graph, f2x)
        live = informative_edges(graph, updated)
        change = float(np.max(np.abs(updated[live] - f2x[live]) / updated[live])) if live.any() else 0.0
        f2x = updated
        if change <= VARIANCE_TOLERANCE:
            f2x, x2f = precision_step(graph, np.where(live, f2x, 0.0))
            dropped = int(np.count_nonzero(f2x[graph.branch_edges] == 0.0))
            logger.debug("variance fixed point after %d steps, %d uninformative message(s)", step, dropped)
            return VarianceFixedPoint(f2x, x2f, step)
    raise AnalysisError(f"variances did not settle within {VARIANCE_MAX_STEPS} steps")


def _propagation(graph: FactorGraph, v_star: VarianceFixedPoint) -> sp.csr_matrix:
    """d x E map from factor-to-variable means (all edges) to the next branch means, minus constants.

    Rows of uninformative targets are zero; their inputs have zero precision.
    """
    d, b = graph.dimension, graph.branch_edges
    h = graph.edge_coefficient[b]
    ft, fs = graph.factor_pairs
    live = v_star.informative(graph)[ft]
    coupling = np.zeros(ft.size)
    coupling[live] = -h[fs[live]] / h[ft[live]] / v_star.x2f_precision[fs[live]]
    a = sp.csr_matrix((coupling, (ft, fs)), shape=(d, d))
    vt, vs = graph.variable_pairs
    weights = sp.csr_matrix((v_star.f2x_precision[vs], (vt, vs)), shape=(d, graph.edge_count))
    return (a @ weights).tocsc()


def build_omega(graph: FactorGraph, v_star: VarianceFixedPoint) -> np.ndarray:
    return _propagation(graph, v_star)[:, graph.branch_edges].toarray()


def build_cf(graph: FactorGraph, v_star: VarianceFixedPoint) -> np.ndarray:
    b = graph.branch_edges
    base = np.where(v_star.informative(graph), graph.observations[graph.edge_factor[b]] / graph.edge_coefficient[b],
                    0.0)
    if graph.leaf_edges.size == 0:
        return base
    leaf_mean, _ = leaf_messages(graph)
    return base + _propagation(graph, v_star)[:, graph.leaf_edges] @ leaf_mean


def _power_radius(omega, tolerance: float, max_steps: int) -> float:
    d = omega.shape[0]
    x = np.random.default_rng(0).random(d) + 0.5
    x /= np.linalg.norm(x)
    estimate, diff_prev = None, None
    for _ in range(max_steps):
        y = omega @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        x = y / norm
        if estimate is not None:
            diff = abs(norm - estimate)
            if diff == 0.0:
                return norm
            if diff_prev is not None and diff < diff_prev:
                # geometric tail of the remaining corrections
                ratio = diff / diff_prev
                if diff * ratio / (1.0 - ratio) <= tolerance * max(norm, 1.0):
                    return norm
            diff_prev = diff
        estimate = norm
    raise AnalysisError(f"power iteration did not converge within {max_steps} steps", estimate=estimate)


def spectral_radius(
    omega,
    method: Literal["auto", "dense", "power"] = "auto",
    tolerance: float = POWER_TOLERANCE,
    max_steps: int = POWER_MAX_STEPS,
) -> float:
    """Largest eigenvalue magnitude of ``omega``; dense eigensolve up to d = 2000."""
    shape = omega.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise AnalysisError(f"spectral radius needs a square matrix, got shape {shape}")
    if shape[0] == 0:
        return 0.0
    if method == "auto":
        method = "dense" if shape[0] <= DENSE_EIGEN_LIMIT else "power"
    if method == "dense":
        dense = omega.toarray() if sp.issparse(omega) else np.asarray(omega)
        return float(np.max(np.abs(scipy.linalg.eigvals(dense))))
    return _power_radius(omega, tolerance, max_steps)


def fixed_point_means(omega: np.ndarray, c_f: np.ndarray) -> np.ndarray:
    """Solve (I - Omega) m* = c_f directly."""
    d = c_f.size
    if d == 0:
        return c_f.copy()
    system = np.eye(d) - omega
    lu, piv = scipy.linalg.lu_factor(system, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= 1e-14 * max(pivots.max(), 1.0):
        raise AnalysisError("I - Omega is singular")
    m_star = scipy.linalg.lu_solve((lu, piv), c_f)
    residual = np.max(np.abs(m_star - (c_f + omega @ m_star)))
    scale = max(np.max(np.abs(m_star)), np.finfo(float).tiny)
    if residual > 1e-9 * scale:
        raise AnalysisError(f"fixed-point residual {residual:.3e} too large; I - Omega is ill conditioned")
    return m_star


def build_q_projector(graph: FactorGraph, classification: FactorClassification) -> sp.csr_matrix:
    """Diagonal 0/1: 1 on internal branch factor edges, 0 on tie factor edges."""
    internal = ~classification.is_tie[graph.edge_factor[graph.branch_edges]]
    return sp.diags(internal.astype(np.float64), format="csr")


def marginals_from_fixed_point(graph: FactorGraph, v_star: VarianceFixedPoint, m_star: np.ndarray):
    precision = v_star.f2x_precision
    weighted = np.empty(graph.edge_count)
    weighted[graph.leaf_edges] = leaf_information(graph)[1]
    weighted[graph.branch_edges] = precision[graph.branch_edges] * m_star
    d = graph.dimension
    return compute_marginals(graph, MessageState(precision, weighted, np.full(d, np.nan), np.full(d, np.nan)))


def damped_operator(omega: np.ndarray, c_f: np.ndarray, mask: np.ndarray, zeta: float):
    """Affine map of a damped iteration: diag(1 - zeta q) Omega + zeta diag(q), diag(1 - zeta q) c_f."""
    q = np.asarray(mask, dtype=np.float64)
    keep = 1.0 - zeta * q
    return keep[:, None] * omega + np.diag(zeta * q), keep * c_f


def global_mean_step(omega: np.ndarray, c_f: np.ndarray, means: np.ndarray) -> np.ndarray:
    return c_f + omega @ means


def local_mean_step(omega: np.ndarray, c_f: np.ndarray, q_projector, means: np.ndarray,
                    snapshot: np.ndarray) -> np.ndarray:
    """Q c_f + (I - Q) snapshot + Q Omega m."""
    q = _diagonal(q_projector)
    return q * (c_f + omega @ means) + (1.0 - q) * snapshot


def sequence_operator(omega: np.ndarray, q_projector, global_iterations: int, local_iterations: int,
                      order: str = "global-first") -> np.ndarray:
    """Linear part of one alternating sequence acting on m_f.

    While frozen the tie coordinates stay at their snapshot, which is their own
    value at freeze time, so a local step is linear with matrix Q Omega + (I - Q).
    """
    q = _diagonal(q_projector)
    local = q[:, None] * omega + np.diag(1.0 - q)
    g = np.linalg.matrix_power(omega, global_iterations)
    l = np.linalg.matrix_power(local, local_iterations)
    return l @ g if order == "global-first" else g @ l


def _diagonal(q_projector) -> np.ndarray:
    if sp.issparse(q_projector):
        return q_projector.diagonal()
    q = np.asarray(q_projector, dtype=np.float64)
    return np.diag(q) if q.ndim == 2 else q


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    dimension: int
    edge_index: np.ndarray
    omega: np.ndarray
    c_f: np.ndarray
    v_star: VarianceFixedPoint
    q_projector: Optional[sp.csr_matrix] = None

    def rho(self, method: str = "auto") -> float:
        return spectral_radius(self.omega, method)

    def fixed_point(self) -> np.ndarray:
        return fixed_point_means(self.omega, self.c_f)


def decompose(graph: FactorGraph, classification: Optional[FactorClassification] = None) -> SpectralDecomposition:
    v_star = solve_variance_fixed_point(graph)
    b = graph.branch_edges
    edge_index = np.column_stack([graph.edge_factor[b], graph.edge_variable[b]])
    q = None if classification is None else build_q_projector(graph, classification)
    return SpectralDecomposition(graph.dimension, edge_index, build_omega(graph, v_star),
                                 build_cf(graph, v_star), v_star, q)
