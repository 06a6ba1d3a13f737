from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from agbp.config import settings
from agbp.dynamics import AgingModel
from agbp.engine import DampingSettings
from agbp.generator import GeneratorSpec
from agbp.scheduler import Schedule


class ModelPayload(BaseModel):
    """Inline linear model: H as (row, col, value) triplets."""

    rows: int = Field(..., ge=1)
    cols: int = Field(..., ge=1)
    entries: List[Tuple[int, int, float]]
    observations: List[float]
    variances: List[float]
    partition: Optional[List[int]] = Field(None, description="cluster id per variable")


class AgingConfig(BaseModel):
    """Growth curve applied to selected factors.

    ``factors`` lists factor ids explicitly; otherwise ``rows`` picks the
    dependent (non-core) rows of a rectangular generated model. Times are
    relative to the arrival at t = 0.
    """

    kind: Literal["logarithmic", "exponential", "linear"] = "logarithmic"
    rate: float = Field(..., gt=0)
    shape: float = Field(0.0, ge=0)
    hold: float = Field(0.0, ge=0, description="ticks at the base variance")
    saturate_at: Optional[float] = Field(None, ge=0)
    ceiling: Optional[float] = Field(None, gt=0)
    factors: Optional[List[int]] = None
    rows: Literal["dependent", "all"] = "dependent"
    age_at: float = Field(10.0, ge=0, description="checkpoint at which aged variances are applied")

    @model_validator(mode="after")
    def _check_saturation(self):
        if (self.saturate_at is None) == (self.ceiling is None):
            raise ValueError("aging needs exactly one of 'saturate_at' or 'ceiling'")
        if self.saturate_at is not None and self.saturate_at < self.hold:
            raise ValueError("saturate_at precedes the end of the hold phase")
        return self

    def model_for(self, base_variance: float, arrival: float = 0.0) -> AgingModel:
        return AgingModel(
            kind=self.kind,
            rate=self.rate,
            shape=self.shape,
            base_variance=base_variance,
            arrival=arrival,
            hold_until=arrival + self.hold,
            saturate_at=None if self.saturate_at is None else arrival + self.saturate_at,
            ceiling=self.ceiling,
        )


class ScheduleGrid(BaseModel):
    global_iterations: List[int] = Field(default_factory=lambda: [1], min_length=1)
    local_iterations: List[int] = Field(default_factory=lambda: [1, 5, 30, 60, 90], min_length=1)
    order: Literal["global-first", "local-first"] = "global-first"

    def schedules(self) -> List[Schedule]:
        return [Schedule(kind="alternating", global_iterations=g, local_iterations=l, order=self.order)
                for g in self.global_iterations for l in self.local_iterations]


class ScenarioConfig(BaseModel):
    name: str = Field(..., min_length=1)
    generator: GeneratorSpec
    mode: Literal["static", "perturbation", "aging"] = "static"
    perturbation_probability: float = Field(0.1, ge=0, le=1, description="p_z")
    aging: Optional[AgingConfig] = None

    @model_validator(mode="after")
    def _check_mode(self):
        if self.mode == "aging" and self.aging is None:
            raise ValueError(f"scenario '{self.name}' uses mode 'aging' without an aging config")
        return self


class ExperimentConfig(BaseModel):
    scenarios: List[ScenarioConfig] = Field(..., min_length=1)
    schedules: ScheduleGrid = Field(default_factory=ScheduleGrid)
    damping: Optional[DampingSettings] = None
    damp_synchronous: bool = False
    repetitions: int = Field(500, ge=1)
    tolerance: float = Field(settings.tolerance, gt=0)
    oracle: bool = Field(True, description="stop on RMSE against the WLS solution")
    base_seed: int = Field(0, ge=0, lt=2**64)
    max_iterations: int = Field(settings.max_iterations, ge=1)
    max_sequences: int = Field(settings.max_sequences, ge=1)
    workers: int = Field(settings.workers, ge=1)
    output_dir: str = settings.output_dir


class ModelSource(BaseModel):
    """A generated or an inline model. Both may be absent when the CLI reads model files."""

    generator: Optional[GeneratorSpec] = None
    model: Optional[ModelPayload] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.generator is not None and self.model is not None:
            raise ValueError("give only one of 'generator' or 'model'")
        return self


class RunRequest(ModelSource):
    schedule: Schedule = Field(default_factory=Schedule.synchronous)
    damping: Optional[DampingSettings] = None
    tolerance: float = Field(settings.tolerance, gt=0)
    oracle: bool = True
    max_iterations: int = Field(settings.max_iterations, ge=1)
    max_sequences: int = Field(settings.max_sequences, ge=1)
    prior_mean: float = settings.prior_mean
    prior_variance: float = Field(settings.prior_variance, gt=0)


class AnalyzeRequest(ModelSource):
    method: Literal["auto", "dense", "power"] = "auto"


class AgingAssignment(BaseModel):
    factors: List[int] = Field(..., min_length=1)
    model: AgingModel


class DynamicConfig(BaseModel):
    """Settings of the ``dynamic`` command; events come from a CSV file."""

    schedule: Schedule = Field(default_factory=Schedule)
    damping: Optional[DampingSettings] = None
    tolerance: float = Field(settings.tolerance, gt=0)
    oracle: bool = True
    aging: List[AgingAssignment] = Field(default_factory=list)
    checkpoints: List[float] = Field(default_factory=list)


class RunSummary(BaseModel):
    converged: bool
    diverged: bool
    nu: int
    nu_s: Optional[int] = None
    nu_g: Optional[int] = None
    nu_l: Optional[int] = None
    rmse_final: Optional[float] = None
    seed: Optional[int] = None
    schedule: str


class AnalysisReport(BaseModel):
    d: int
    rho: float
    converges_predicted: bool
    fixed_point_rmse_vs_wls: Optional[float] = None
