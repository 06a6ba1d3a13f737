"""Monte Carlo sweeps comparing synchronous and alternating schedules.

Each (scenario, repetition) pair is an independent trial with seed
``base_seed + scenario_index * repetitions + repetition``. Trials may run in a
process pool; records are always emitted in (scenario, repetition, schedule)
order, so two sweeps with the same config produce byte-identical files.
"""
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from agbp.analysis import wls_solve
from agbp.config import get_logger
from agbp.dynamics import StateResampleLaw, apply_aging, perturb_observations
from agbp.engine import DampingConfig
from agbp.errors import AgbpError
from agbp.generator import generate_model
from agbp.graph import FactorClassification, FactorGraph, build_factor_graph, classify_factors
from agbp.scheduler import RunConfig, RunResult, Schedule, run_alternating, run_synchronous
from agbp.schemas import ExperimentConfig, ScenarioConfig

logger = get_logger(__name__)

RECORD_FIELDS = ["scenario", "seed", "nu", "nu_s", "nu_g", "nu_l", "kappa", "phi",
                 "sync_converged", "agbp_converged", "rmse_sync", "rmse_agbp"]
SUMMARY_FIELDS = ["scenario", "trials", "sync_convergence", "agbp_convergence",
                  "median_phi", "median_nu", "median_nu_s"]
DYNAMIC_FIELDS = ["scenario", "seed", "mode", "changed", "warm_converged", "warm_nu_s",
                  "cold_converged", "cold_nu_s"]


def kappa_from_counts(lambda_counts: Sequence[float], gamma_counts: Sequence[float]) -> float:
    lam = np.asarray(lambda_counts, dtype=np.float64)
    gam = np.asarray(gamma_counts, dtype=np.float64)
    total = lam.sum() + gam.sum()
    if total <= 0:
        raise AgbpError("kappa is undefined for a graph without edges")
    kappa = float(lam.max() / total)
    if lam.size == 1 or kappa >= 1.0:
        logger.warning("kappa = %.6g: a single cluster holds every edge", kappa)
    return kappa


def compute_kappa(classification: FactorClassification) -> float:
    """Largest cluster's internal edges over all edges of the graph."""
    return kappa_from_counts(classification.lambda_counts, classification.gamma_counts)


def compute_scale_factor(nu: int, nu_s: int, nu_g: int, nu_l: int, kappa: float) -> float:
    """phi = (nu - kappa nu_s (nu_g + nu_l)) / (nu_s nu_g); tau_c = phi tau_m is the break-even delay."""
    if nu_s < 1 or nu_g < 1:
        raise ValueError(f"scale factor needs nu_s >= 1 and nu_g >= 1, got {nu_s} and {nu_g}")
    return (nu - kappa * nu_s * (nu_g + nu_l)) / (nu_s * nu_g)


def sync_time(nu: int, tau_m: float) -> float:
    return nu * tau_m


def agbp_time(nu_s: int, nu_g: int, nu_l: int, kappa: float, tau_m: float, tau_c: float) -> float:
    """Global iterations pay the cluster share plus the inter-cluster delay, local ones the share only."""
    return nu_s * nu_g * (kappa * tau_m + tau_c) + nu_s * nu_l * kappa * tau_m


def lower_median(values: Sequence[float]) -> Optional[float]:
    ordered = sorted(values)
    if not ordered:
        return None
    return ordered[(len(ordered) - 1) // 2]


def trial_seed(base_seed: int, scenario_index: int, repetition: int, repetitions: int) -> int:
    return base_seed + scenario_index * repetitions + repetition


def scenario_id(scenario: ScenarioConfig, schedule: Schedule) -> str:
    return f"{scenario.name}/g{schedule.global_iterations}-l{schedule.local_iterations}"


@dataclass
class MetricRecord:
    scenario: str
    seed: int
    nu: Optional[int]
    nu_s: Optional[int]
    nu_g: int
    nu_l: int
    kappa: Optional[float]
    phi: Optional[float]
    sync_converged: bool
    agbp_converged: bool
    rmse_sync: Optional[float]
    rmse_agbp: Optional[float]

    def row(self) -> List[str]:
        return [_fmt(getattr(self, name)) for name in RECORD_FIELDS]


@dataclass
class DynamicRecord:
    scenario: str
    seed: int
    mode: str
    changed: int
    warm_converged: bool
    warm_nu_s: Optional[int]
    cold_converged: bool
    cold_nu_s: Optional[int]

    def row(self) -> List[str]:
        return [_fmt(getattr(self, name)) for name in DYNAMIC_FIELDS]


@dataclass
class TrialOutcome:
    records: List[MetricRecord] = field(default_factory=list)
    dynamic: List[DynamicRecord] = field(default_factory=list)


@dataclass
class SweepResult:
    records: List[MetricRecord]
    dynamic: List[DynamicRecord]
    summary: List[List[str]]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class _Trial:
    def __init__(self, config: ExperimentConfig, scenario_index: int, repetition: int):
        self.config = config
        self.scenario = config.scenarios[scenario_index]
        self.seed = trial_seed(config.base_seed, scenario_index, repetition, config.repetitions)
        spec = self.scenario.generator.model_copy(update={"seed": self.seed})
        self.spec = spec
        self.model, self.partition = generate_model(spec)
        self.graph = build_factor_graph(self.model)
        self.classification = classify_factors(self.graph, self.partition)
        self.kappa = compute_kappa(self.classification)
        oracle = wls_solve(self.model) if config.oracle else None
        self.run_config = RunConfig(max_iterations=config.max_iterations, max_sequences=config.max_sequences,
                                    tolerance=config.tolerance, oracle=oracle, seed=self.seed)

    def damping(self, graph: FactorGraph) -> Optional[DampingConfig]:
        settings = self.config.damping
        return None if settings is None else DampingConfig.from_settings(graph, settings, self.seed)

    def synchronous(self) -> RunResult:
        damping = self.damping(self.graph) if self.config.damp_synchronous else None
        return run_synchronous(self.graph, replace(self.run_config, damping=damping))

    def alternating(self, schedule: Schedule, graph: Optional[FactorGraph] = None, **overrides) -> RunResult:
        graph = graph or self.graph
        config = replace(self.run_config, damping=self.damping(graph), **overrides)
        return run_alternating(graph, self.partition, schedule, config, self.classification)

    def changed_graph(self):
        """The perturbed or aged instance of a dynamic scenario."""
        rng = np.random.default_rng([self.seed, 1])
        p_z = self.scenario.perturbation_probability
        if self.scenario.mode == "perturbation":
            return perturb_observations(self.graph, p_z, StateResampleLaw(), rng)
        aging = self.scenario.aging
        if aging.factors is not None:
            candidates = np.asarray(aging.factors, dtype=np.int64)
        elif aging.rows == "dependent":
            local = np.arange(self.graph.factor_count) % self.spec.rows_per_cluster
            candidates = np.flatnonzero(local >= self.spec.cols_per_cluster)
        else:
            candidates = np.arange(self.graph.factor_count)
        chosen = candidates[rng.random(candidates.size) < p_z]
        models = {int(i): aging.model_for(float(self.graph.variances[i])) for i in chosen}
        return apply_aging(self.graph, models, aging.age_at), chosen

    def restart(self, schedule: Schedule, converged: RunResult) -> DynamicRecord:
        graph, changed = self.changed_graph()
        oracle = wls_solve(graph.to_model()) if self.config.oracle else None
        warm = self.alternating(schedule, graph, oracle=oracle, initial_state=converged.state, check_initial=True)
        cold = self.alternating(schedule, graph, oracle=oracle)
        return DynamicRecord(scenario_id(self.scenario, schedule), self.seed, self.scenario.mode, int(changed.size),
                             warm.converged, warm.sequences, cold.converged, cold.sequences)


def _failed(config: ExperimentConfig, scenario: ScenarioConfig, seed: int, kappa=None) -> TrialOutcome:
    return TrialOutcome([
        MetricRecord(scenario_id(scenario, s), seed, None, None, s.global_iterations, s.local_iterations,
                     kappa, None, False, False, None, None)
        for s in config.schedules.schedules()
    ])


def run_trial(config: ExperimentConfig, scenario_index: int, repetition: int) -> TrialOutcome:
    """Synchronous run plus one alternating run per schedule in the grid."""
    scenario = config.scenarios[scenario_index]
    seed = trial_seed(config.base_seed, scenario_index, repetition, config.repetitions)
    try:
        trial = _Trial(config, scenario_index, repetition)
        sync = trial.synchronous()
    except AgbpError as e:
        logger.warning("trial %s seed %d failed: %s", scenario.name, seed, e)
        return _failed(config, scenario, seed)

    outcome = TrialOutcome()
    for schedule in config.schedules.schedules():
        try:
            agbp = trial.alternating(schedule)
        except AgbpError as e:
            logger.warning("trial %s seed %d failed: %s", scenario_id(scenario, schedule), seed, e)
            outcome.records.append(MetricRecord(
                scenario_id(scenario, schedule), seed, sync.iterations if sync.converged else None, None,
                schedule.global_iterations, schedule.local_iterations, trial.kappa, None,
                sync.converged, False, sync.rmse_final, None))
            continue
        phi = None
        if sync.converged and agbp.converged and agbp.sequences >= 1:
            phi = compute_scale_factor(sync.iterations, agbp.sequences, schedule.global_iterations,
                                       schedule.local_iterations, trial.kappa)
        outcome.records.append(MetricRecord(
            scenario=scenario_id(scenario, schedule),
            seed=seed,
            nu=sync.iterations if sync.converged else None,
            nu_s=agbp.sequences if agbp.converged else None,
            nu_g=schedule.global_iterations,
            nu_l=schedule.local_iterations,
            kappa=trial.kappa,
            phi=phi,
            sync_converged=sync.converged,
            agbp_converged=agbp.converged,
            rmse_sync=sync.rmse_final,
            rmse_agbp=agbp.rmse_final,
        ))
        if scenario.mode != "static" and agbp.converged:
            try:
                outcome.dynamic.append(trial.restart(schedule, agbp))
            except AgbpError as e:
                logger.warning("restart %s seed %d failed: %s", scenario_id(scenario, schedule), seed, e)
    return outcome


def _trial_task(args) -> TrialOutcome:
    payload, scenario_index, repetition = args
    return run_trial(ExperimentConfig.model_validate(payload), scenario_index, repetition)


def summarize(records: Sequence[MetricRecord]) -> List[List[str]]:
    rows = []
    for name in dict.fromkeys(r.scenario for r in records):
        group = [r for r in records if r.scenario == name]
        n = len(group)
        rows.append([
            name,
            str(n),
            _fmt(sum(r.sync_converged for r in group) / n),
            _fmt(sum(r.agbp_converged for r in group) / n),
            _fmt(lower_median([r.phi for r in group if r.phi is not None])),
            _fmt(lower_median([r.nu for r in group if r.nu is not None])),
            _fmt(lower_median([r.nu_s for r in group if r.nu_s is not None])),
        ])
    return rows


def run_sweep(config: ExperimentConfig) -> SweepResult:
    tasks = [(i, r) for i in range(len(config.scenarios)) for r in range(config.repetitions)]
    logger.info("sweep: %d scenario(s) x %d repetition(s) x %d schedule(s), %d worker(s)",
                len(config.scenarios), config.repetitions, len(config.schedules.schedules()), config.workers)
    if config.workers > 1:
        payload = config.model_dump()
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_trial_task, [(payload, i, r) for i, r in tasks]))
    else:
        outcomes = [run_trial(config, i, r) for i, r in tasks]

    records = [rec for outcome in outcomes for rec in outcome.records]
    dynamic = [rec for outcome in outcomes for rec in outcome.dynamic]
    result = SweepResult(records, dynamic, summarize(records))
    for row in result.summary:
        logger.info("%s: sync %s, agbp %s, median phi %s", row[0], row[2], row[3], row[4] or "n/a")
    return result


def write_sweep(result: SweepResult, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "sweep_records.csv", out / "sweep_summary.csv"]
    with open(written[0], "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        writer.writerows(rec.row() for rec in result.records)
    with open(written[1], "w", newline="") as f:
        f.write("# median: lower (element (n-1)//2 of the sorted values)\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        writer.writerows(result.summary)
    if result.dynamic:
        written.append(out / "sweep_dynamic.csv")
        with open(written[-1], "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(DYNAMIC_FIELDS)
            writer.writerows(rec.row() for rec in result.dynamic)
    return written
