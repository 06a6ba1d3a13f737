"""Run/analyze/dynamic entry points shared by the CLI and the HTTP service."""
from typing import List, Optional, Tuple

import numpy as np

from agbp.analysis import (
    decompose,
    fixed_point_means,
    marginals_from_fixed_point,
    spectral_radius,
    wls_solve,
)
from agbp.config import get_logger
from agbp.dynamics import ObservationEvent, run_dynamic
from agbp.engine import DampingConfig, DampingSettings, TraceWriter
from agbp.errors import AnalysisError, ConfigError
from agbp.generator import generate_model
from agbp.graph import FactorGraph, build_factor_graph
from agbp.model import ClusterPartition, LinearModel
from agbp.scheduler import RunConfig, RunResult, rmse, run_schedule
from agbp.schemas import AnalysisReport, DynamicConfig, ModelPayload, ModelSource, RunRequest

logger = get_logger(__name__)


def model_from_payload(payload: ModelPayload) -> Tuple[LinearModel, Optional[ClusterPartition]]:
    model = LinearModel.from_entries(payload.rows, payload.cols, payload.entries,
                                     payload.observations, payload.variances)
    partition = None
    if payload.partition is not None:
        assignment = payload.partition
        partition = ClusterPartition(max(assignment) + 1 if assignment else 0, assignment)
    return model, partition


def resolve_model(source: ModelSource) -> Tuple[LinearModel, Optional[ClusterPartition], Optional[int]]:
    """(model, partition, seed) from a generator spec or an inline model."""
    if source.generator is not None:
        model, partition = generate_model(source.generator)
        return model, partition, source.generator.seed
    if source.model is not None:
        model, partition = model_from_payload(source.model)
        return model, partition, None
    raise ConfigError("no model given: supply 'generator', 'model' or model files")


def _oracle(model: LinearModel, enabled: bool):
    if not enabled:
        return None
    try:
        return wls_solve(model)
    except AnalysisError as e:
        logger.warning("no WLS oracle (%s); stopping on message residuals", e)
        return None


def _damping(graph: FactorGraph, damping: Optional[DampingSettings], seed: Optional[int]):
    return None if damping is None else DampingConfig.from_settings(graph, damping, seed)


def execute_run(
    model: LinearModel,
    partition: Optional[ClusterPartition],
    request: RunRequest,
    seed: Optional[int] = None,
    trace_path: Optional[str] = None,
) -> RunResult:
    graph = build_factor_graph(model)
    config = RunConfig(
        max_iterations=request.max_iterations,
        max_sequences=request.max_sequences,
        tolerance=request.tolerance,
        oracle=_oracle(model, request.oracle),
        damping=_damping(graph, request.damping, seed),
        prior_mean=request.prior_mean,
        prior_variance=request.prior_variance,
        seed=seed,
    )
    if trace_path is None:
        return run_schedule(graph, partition, request.schedule, config)
    with TraceWriter(trace_path) as trace:
        config.trace = trace
        return run_schedule(graph, partition, request.schedule, config)


def analyze_model(model: LinearModel, method: str = "auto") -> AnalysisReport:
    graph = build_factor_graph(model)
    decomposition = decompose(graph)
    rho = spectral_radius(decomposition.omega, method)
    error = None
    try:
        m_star = fixed_point_means(decomposition.omega, decomposition.c_f)
        means, _ = marginals_from_fixed_point(graph, decomposition.v_star, m_star)
        error = rmse(means, wls_solve(model))
    except AnalysisError as e:
        logger.warning("fixed-point comparison skipped: %s", e)
    uninformative = int(np.count_nonzero(~decomposition.v_star.informative(graph)))
    logger.info("analysis: d=%d rho=%.6g, %d uninformative message(s)", decomposition.dimension, rho, uninformative)
    return AnalysisReport(d=decomposition.dimension, rho=rho, converges_predicted=rho < 1.0,
                          fixed_point_rmse_vs_wls=error)


def execute_dynamic(
    model: LinearModel,
    partition: Optional[ClusterPartition],
    events: List[ObservationEvent],
    config: DynamicConfig,
) -> List[RunResult]:
    graph = build_factor_graph(model)
    aging = {}
    for assignment in config.aging:
        for factor in assignment.factors:
            if not 0 <= factor < graph.factor_count:
                raise ConfigError(f"aging assigned to unknown factor {factor}")
            aging[factor] = assignment.model
    run_config = RunConfig(tolerance=config.tolerance, oracle=_oracle(model, config.oracle),
                           damping=_damping(graph, config.damping, None))
    return run_dynamic(graph, partition, config.schedule, events, run_config, aging, config.checkpoints)
