"""Streaming observations and variance aging on top of warm-started runs.

Time is measured in abstract ticks. Events and aging are only evaluated at run
checkpoints: a batch of events sharing a time stamp is applied, aged
variances are refreshed, and the run resumes from the previous message state.
"""
import math
from dataclasses import dataclass, replace
from itertools import groupby
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from agbp.analysis import wls_solve
from agbp.config import get_logger
from agbp.errors import ConfigError
from agbp.graph import FactorGraph
from agbp.model import ClusterPartition
from agbp.scheduler import RunConfig, RunResult, Schedule, run_schedule

logger = get_logger(__name__)


class AgingModel(BaseModel):
    """Hold at ``base_variance`` until ``hold_until``, grow along the curve,
    then stay at ``ceiling`` from ``saturate_at`` on.

    Give either ``saturate_at`` or ``ceiling``; the other is derived from the curve.
    """

    kind: Literal["logarithmic", "exponential", "linear"] = "logarithmic"
    rate: float = Field(..., gt=0, description="alpha")
    shape: float = Field(0.0, ge=0, description="beta")
    base_variance: float = Field(..., gt=0)
    arrival: float = 0.0
    hold_until: Optional[float] = None
    saturate_at: Optional[float] = None
    ceiling: Optional[float] = None

    @model_validator(mode="after")
    def _derive(self):
        if self.hold_until is None:
            self.hold_until = self.arrival
        if self.hold_until < self.arrival:
            raise ValueError(f"hold_until {self.hold_until} precedes arrival {self.arrival}")
        if self.saturate_at is None and self.ceiling is None:
            raise ValueError("give saturate_at or ceiling")
        if self.saturate_at is not None:
            if self.saturate_at < self.hold_until:
                raise ValueError(f"saturate_at {self.saturate_at} precedes hold_until {self.hold_until}")
            derived = self.curve(self.saturate_at)
            if self.ceiling is not None and not math.isclose(self.ceiling, derived, rel_tol=1e-9):
                raise ValueError(f"ceiling {self.ceiling} disagrees with the curve value {derived} at saturate_at")
            self.ceiling = derived
        else:
            if self.ceiling < self.base_variance:
                raise ValueError(f"ceiling {self.ceiling} is below base variance {self.base_variance}")
            self.saturate_at = self.hold_until + self._time_to_reach(self.ceiling)
        return self

    def curve(self, t: float) -> float:
        """Growth law with its origin at ``hold_until``."""
        dt = t - self.hold_until
        v, alpha, beta = self.base_variance, self.rate, self.shape
        if self.kind == "logarithmic":
            return alpha * math.log((dt + 1.0 + beta) / (1.0 + beta)) + v
        if self.kind == "exponential":
            return v * (1.0 + beta) ** (alpha * dt)
        return alpha * dt + v

    def _time_to_reach(self, target: float) -> float:
        v, alpha, beta = self.base_variance, self.rate, self.shape
        if target == v:
            return 0.0
        if self.kind == "logarithmic":
            return (1.0 + beta) * (math.exp((target - v) / alpha) - 1.0)
        if self.kind == "exponential":
            if beta == 0:
                raise ValueError("exponential growth with shape 0 never leaves the base variance")
            return math.log(target / v) / (alpha * math.log1p(beta))
        return (target - v) / alpha

    def rearm(self, arrival: float, base_variance: Optional[float] = None) -> "AgingModel":
        """Same curve restarted at ``arrival``; phase lengths are kept."""
        shift = arrival - self.arrival
        return AgingModel(
            kind=self.kind,
            rate=self.rate,
            shape=self.shape,
            base_variance=self.base_variance if base_variance is None else base_variance,
            arrival=arrival,
            hold_until=self.hold_until + shift,
            saturate_at=self.saturate_at + shift,
        )


def variance_at(model: AgingModel, t: float) -> float:
    if t < model.arrival:
        raise ValueError(f"time {t} precedes the observation arrival {model.arrival}")
    if t <= model.hold_until:
        return model.base_variance
    if t >= model.saturate_at:
        return model.ceiling
    return min(model.curve(t), model.ceiling)


@dataclass(frozen=True)
class ObservationEvent:
    time: float
    factor: int
    observation: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError(f"event variance must be positive and finite, got {self.variance}")
        if not math.isfinite(self.observation) or not math.isfinite(self.time):
            raise ValueError("event time and observation must be finite")
        if self.factor < 0:
            raise ValueError(f"factor id must be non-negative, got {self.factor}")


def apply_event(graph: FactorGraph, event: ObservationEvent) -> FactorGraph:
    """Replace one factor's (z, v); structure and message state are untouched."""
    return graph.with_observation(event.factor, event.observation, event.variance)


def apply_aging(graph: FactorGraph, aging: Dict[int, AgingModel], t: float) -> FactorGraph:
    """Set every aged factor's variance to its curve value at ``t``."""
    if not aging:
        return graph
    variances = graph.variances.copy()
    for factor, model in aging.items():
        if t >= model.arrival:
            variances[factor] = variance_at(model, t)
    return graph.with_observations(variances=variances)


class StateResampleLaw:
    """Redraw z_i = h_i x + noise_i with a fresh x ~ Uniform[0, 1)^n, the generator's own law."""

    name = "state-resample"

    def sample(self, graph: FactorGraph, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = rng.random(graph.variable_count)
        mean = np.bincount(graph.edge_factor, weights=graph.edge_coefficient * x[graph.edge_variable],
                           minlength=graph.factor_count)
        return mean[rows] + rng.normal(0.0, np.sqrt(graph.variances[rows]))


class UniformLaw:
    name = "uniform"

    def __init__(self, low: float = 0.0, high: float = 1.0):
        if not high > low:
            raise ValueError(f"empty interval [{low}, {high})")
        self.low, self.high = low, high

    def sample(self, graph: FactorGraph, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, rows.size)


def perturb_observations(
    graph: FactorGraph,
    probability: float,
    law=None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[FactorGraph, np.ndarray]:
    """Replace each observation independently with probability ``probability``."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"perturbation probability must lie in [0, 1], got {probability}")
    law = law or StateResampleLaw()
    rng = rng or np.random.default_rng()
    changed = np.flatnonzero(rng.random(graph.factor_count) < probability)
    if changed.size == 0:
        return graph, changed
    z = graph.observations.copy()
    z[changed] = law.sample(graph, changed, rng)
    return graph.with_observations(observations=z), changed


def _batches(events: Sequence[ObservationEvent]) -> List[Tuple[float, List[ObservationEvent]]]:
    times = [e.time for e in events]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ConfigError("events must be ordered by time")
    return [(t, list(group)) for t, group in groupby(events, key=lambda e: e.time)]


def run_dynamic(
    graph: FactorGraph,
    partition: Optional[ClusterPartition],
    schedule: Schedule,
    events: Iterable[ObservationEvent],
    config: Optional[RunConfig] = None,
    aging: Optional[Dict[int, AgingModel]] = None,
    checkpoints: Iterable[float] = (),
) -> List[RunResult]:
    """Run to convergence, then for every event time (and aging checkpoint)
    update (z, v) and resume from the warm message state.

    With an oracle configured, the WLS solution is recomputed after every batch.
    """
    config = config or RunConfig()
    aging = dict(aging or {})
    events = list(events)
    batches = dict(_batches(events))
    for t in checkpoints:
        batches.setdefault(float(t), [])

    results = [run_schedule(graph, partition, schedule, config)]
    for t in sorted(batches):
        for event in batches[t]:
            graph = apply_event(graph, event)
            if event.factor in aging:
                aging[event.factor] = aging[event.factor].rearm(t, event.variance)
        graph = apply_aging(graph, aging, t)
        oracle = None if config.oracle is None else wls_solve(graph.to_model())
        warm = replace(config, initial_state=results[-1].state, check_initial=True, oracle=oracle)
        results.append(run_schedule(graph, partition, schedule, warm))
        logger.info("t=%g: %d event(s), warm restart nu=%d nu_s=%s", t, len(batches[t]),
                    results[-1].iterations, results[-1].sequences)
    return results
