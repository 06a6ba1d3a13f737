"""Synchronous and alternating (global/local) runs with convergence bookkeeping."""
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from agbp.config import get_logger, settings
from agbp.engine import (
    DampingConfig,
    MessageState,
    TraceWriter,
    compute_marginals,
    global_iteration,
    informative_edges,
    init_messages,
    local_iteration,
)
from agbp.errors import GraphError
from agbp.graph import FactorClassification, FactorGraph, classify_factors, defreeze, freeze_tie_factors
from agbp.model import ClusterPartition

logger = get_logger(__name__)


class Schedule(BaseModel):
    kind: Literal["synchronous", "alternating"] = "alternating"
    global_iterations: int = Field(1, ge=1, description="nu_g")
    local_iterations: int = Field(0, ge=0, description="nu_l")
    order: Literal["global-first", "local-first"] = "global-first"

    @classmethod
    def synchronous(cls) -> "Schedule":
        return cls(kind="synchronous")

    @property
    def label(self) -> str:
        if self.kind == "synchronous":
            return "synchronous"
        return f"alternating(g={self.global_iterations},l={self.local_iterations},{self.order})"


@dataclass
class RunConfig:
    max_iterations: int = settings.max_iterations
    max_sequences: int = settings.max_sequences
    tolerance: float = settings.tolerance
    oracle: Optional[np.ndarray] = None
    damping: Optional[DampingConfig] = None
    prior_mean: float = settings.prior_mean
    prior_variance: float = settings.prior_variance
    divergence_limit: float = settings.divergence_limit
    # warm start: reuse this state and test convergence before iterating
    initial_state: Optional[MessageState] = None
    check_initial: bool = False
    trace: Optional[TraceWriter] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be non-negative, got {self.tolerance}")
        if self.max_iterations < 1 or self.max_sequences < 1:
            raise ValueError("iteration bounds must be positive")


@dataclass(eq=False)
class RunResult:
    converged: bool
    diverged: bool
    iterations: int
    sequences: Optional[int]
    schedule: Schedule
    estimate: np.ndarray
    variances: np.ndarray
    state: MessageState
    rmse_history: List[float] = field(default_factory=list)
    residual_history: List[float] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def rmse_final(self) -> Optional[float]:
        return self.rmse_history[-1] if self.rmse_history else None

    def summary(self) -> dict:
        alternating = self.schedule.kind == "alternating"
        return {
            "converged": self.converged,
            "diverged": self.diverged,
            "nu": self.iterations,
            "nu_s": self.sequences,
            "nu_g": self.schedule.global_iterations if alternating else None,
            "nu_l": self.schedule.local_iterations if alternating else None,
            "rmse_final": self.rmse_final,
            "seed": self.seed,
            "schedule": self.schedule.label,
        }


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"rmse of vectors with lengths {a.size} and {b.size}")
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _diverged(graph: FactorGraph, state: MessageState, limit: float) -> bool:
    """Non-finite messages, or a marginal mean beyond ``limit``."""
    if not (np.all(np.isfinite(state.f2x_precision)) and np.all(np.isfinite(state.f2x_weighted))):
        return True
    means, _ = compute_marginals(graph, state)
    return not np.all(np.isfinite(means)) or bool(np.any(np.abs(means) > limit))


def _change(graph: FactorGraph, previous: MessageState, current: MessageState) -> float:
    """Largest factor-to-variable mean change among messages informative before and after."""
    live = (informative_edges(graph, previous.f2x_precision)
            & informative_edges(graph, current.f2x_precision))
    if not live.any():
        return 0.0
    return float(np.max(np.abs(current.f2x_mean[live] - previous.f2x_mean[live])))


class _Run:
    """Shared state of one run: messages, histories and the stopping tests."""

    def __init__(self, graph: FactorGraph, schedule: Schedule, config: RunConfig):
        self.graph = graph
        self.schedule = schedule
        self.config = config
        self.state = init_messages(graph, config.prior_mean, config.prior_variance, warm=config.initial_state)
        self.iterations = 0
        self.rmse_history: List[float] = []
        self.residual_history: List[float] = []
        self.diverged = False

    def step(self, update) -> float:
        previous = self.state
        self.state = update(previous)
        self.iterations += 1
        residual = _change(self.graph, previous, self.state)
        self.residual_history.append(residual)
        if self.config.trace is not None:
            self.config.trace.record(self.graph, self.state)
        if _diverged(self.graph, self.state, self.config.divergence_limit):
            self.diverged = True
        return residual

    def converged(self, residual: float) -> bool:
        if self.config.oracle is not None:
            means, _ = compute_marginals(self.graph, self.state)
            self.rmse_history.append(rmse(means, self.config.oracle))
            return self.rmse_history[-1] <= self.config.tolerance
        return residual <= self.config.tolerance

    def already_converged(self) -> bool:
        """Warm-start test before any counted iteration."""
        if not self.config.check_initial:
            return False
        if self.config.oracle is not None:
            return self.converged(np.inf)
        trial = global_iteration(self.graph, self.state)
        return _change(self.graph, self.state, trial) <= self.config.tolerance

    def result(self, converged: bool, sequences: Optional[int]) -> RunResult:
        estimate, variances = compute_marginals(self.graph, self.state)
        result = RunResult(
            converged=converged and not self.diverged,
            diverged=self.diverged,
            iterations=self.iterations,
            sequences=sequences,
            schedule=self.schedule,
            estimate=estimate,
            variances=variances,
            state=self.state,
            rmse_history=self.rmse_history,
            residual_history=self.residual_history,
            seed=self.config.seed,
        )
        level = logging.WARNING if result.diverged else logging.INFO
        logger.log(level, "%s run: converged=%s diverged=%s nu=%d nu_s=%s",
                   self.schedule.label, result.converged, result.diverged, result.iterations, sequences)
        return result


def run_synchronous(graph: FactorGraph, config: Optional[RunConfig] = None) -> RunResult:
    """Repeat global iterations until the stopping test passes, with a check after every iteration."""
    config = config or RunConfig()
    run = _Run(graph, Schedule.synchronous(), config)
    if run.already_converged():
        return run.result(True, None)
    damping = config.damping
    for k in range(config.max_iterations):
        residual = run.step(lambda s: global_iteration(graph, s, damping))
        if run.diverged:
            return run.result(False, None)
        if run.converged(residual):
            return run.result(True, None)
        logger.debug("iteration %d residual %.3e", k + 1, residual)
    return run.result(False, None)


def run_alternating(
    graph: FactorGraph,
    partition: ClusterPartition,
    schedule: Schedule,
    config: Optional[RunConfig] = None,
    classification: Optional[FactorClassification] = None,
) -> RunResult:
    """Sequences of nu_g global and nu_l local iterations; convergence is
    tested at sequence boundaries, and in residual mode against the largest
    change seen within the sequence."""
    if schedule.kind != "alternating":
        raise GraphError("run_alternating needs an alternating schedule")
    config = config or RunConfig()
    classification = classification or classify_factors(graph, partition)
    run = _Run(graph, schedule, config)
    if run.already_converged():
        return run.result(True, 0)
    damping = config.damping

    def global_phase() -> float:
        worst = 0.0
        for _ in range(schedule.global_iterations):
            worst = max(worst, run.step(lambda s: global_iteration(graph, s, damping)))
            if run.diverged:
                break
        return worst

    def local_phase() -> float:
        if schedule.local_iterations == 0:
            return 0.0
        view = freeze_tie_factors(graph, run.state, classification)
        worst = 0.0
        try:
            for _ in range(schedule.local_iterations):
                worst = max(worst, run.step(lambda s: local_iteration(view, s, damping)))
                if run.diverged:
                    break
        finally:
            defreeze(view)
        return worst

    phases = [global_phase, local_phase]
    if schedule.order == "local-first":
        phases.reverse()

    for sequence in range(1, config.max_sequences + 1):
        residual = 0.0
        for phase in phases:
            residual = max(residual, phase())
            if run.diverged:
                return run.result(False, sequence)
        if run.converged(residual):
            return run.result(True, sequence)
        logger.debug("sequence %d residual %.3e", sequence, residual)
    return run.result(False, config.max_sequences)


def run_schedule(graph: FactorGraph, partition: Optional[ClusterPartition], schedule: Schedule,
                 config: Optional[RunConfig] = None) -> RunResult:
    if schedule.kind == "synchronous":
        return run_synchronous(graph, config)
    if partition is None:
        raise GraphError("an alternating schedule requires a cluster partition")
    return run_alternating(graph, partition, schedule, config)
