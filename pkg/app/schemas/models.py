# file: app/schemas/models.py
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Literal, Optional, Tuple, Union


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- Run Configuration ---
class ProblemConfig(StrictModel):
    objective: Literal["paper_toy", "least_squares", "quadratic", "zero"]
    seed: int = 0
    agents: Optional[int] = Field(default=None, ge=1)  # n; fixed at 3 for paper_toy
    dimension: int = Field(default=1, ge=1)
    rows_per_agent: int = Field(default=150, ge=1)
    sparsity: int = Field(default=10, ge=0)
    noise_std: float = Field(default=0.0, ge=0.0)
    curvature: float = Field(default=1.0, gt=0.0)
    centers: Optional[List[List[float]]] = None
    variant: Literal["continuous", "printed"] = "continuous"


class RegularizerConfig(StrictModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    kind: Literal["zero", "l1", "l0", "lq", "scad", "mcp", "box", "ball"]
    lam: float = Field(default=0.0, alias="lambda", ge=0.0)
    q: float = 0.0
    a: float = 3.7
    gamma: float = 2.0
    lo: Optional[float] = None
    hi: Optional[float] = None
    radius: float = 1.0

    @field_validator("kind", mode="before")
    @classmethod
    def indicator_aliases(cls, v):
        # long indicator names are accepted alongside the short kinds
        if isinstance(v, str):
            return {"box_indicator": "box", "ball_indicator": "ball"}.get(v, v)
        return v


class NetworkConfig(StrictModel):
    nodes: Optional[int] = Field(default=None, ge=1)
    edges: Optional[List[Tuple[int, int]]] = None
    matrix: Optional[List[List[float]]] = None
    topology: Optional[Literal["path", "cycle", "complete", "star", "ring_with_chords"]] = None
    lazy: bool = False

    @model_validator(mode="after")
    def _one_source(self) -> "NetworkConfig":
        if self.matrix is not None:
            if self.topology is not None:
                raise ValueError("give either a matrix or a topology, not both")
        elif self.topology is not None:
            if self.nodes is None or self.edges is not None:
                raise ValueError("a topology needs 'nodes' and no explicit 'edges'")
        elif self.nodes is None or self.edges is None:
            raise ValueError("network needs 'matrix', 'topology' + 'nodes', or 'nodes' + 'edges'")
        if self.matrix is not None and self.lazy:
            raise ValueError("'lazy' applies to generated Metropolis weights, not to an explicit matrix")
        return self


class StepConfig(StrictModel):
    kind: Literal["fixed", "decreasing"]
    alpha: Optional[float] = Field(default=None, gt=0.0)
    safe_fraction: Optional[float] = Field(default=None, gt=0.0)
    epsilon: Optional[float] = None
    numerator: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def _complete(self) -> "StepConfig":
        if self.kind == "fixed" and (self.alpha is None) == (self.safe_fraction is None):
            raise ValueError("a fixed step needs exactly one of 'alpha' or 'safe_fraction'")
        if self.kind == "decreasing" and self.epsilon is None:
            raise ValueError("a decreasing step needs 'epsilon'")
        return self


class InitialConfig(StrictModel):
    kind: Literal["zeros", "constant", "rows", "random"] = "zeros"
    value: float = 0.0
    rows: Optional[List[List[float]]] = None
    seed: int = 0
    scale: float = 1.0

    @model_validator(mode="after")
    def _rows_present(self) -> "InitialConfig":
        if self.kind == "rows" and not self.rows:
            raise ValueError("x0 kind 'rows' needs explicit 'rows'")
        return self


class OutputConfig(StrictModel):
    trace_csv: Optional[str] = None
    audit_json: Optional[str] = None
    report_yaml: Optional[str] = None


class RunConfig(StrictModel):
    name: str = "custom"
    description: str = ""
    problem: ProblemConfig
    reg: Optional[Union[RegularizerConfig, List[RegularizerConfig]]] = None
    network: NetworkConfig
    step: StepConfig
    x0: InitialConfig = Field(default_factory=InitialConfig)
    iterations: int = Field(ge=0)
    step_floor: float = Field(default=0.0, ge=0.0)
    output: OutputConfig = Field(default_factory=OutputConfig)


# --- Diagnostics ---
class RateFit(BaseModel):
    window: Tuple[int, int]
    slope: float
    intercept: float
    r_squared: float


class AuditRow(BaseModel):
    name: str
    checked: int
    max_violation: float
    passed: bool


class AuditReport(BaseModel):
    rows: List[AuditRow] = Field(default_factory=list)
    atol: float
    rtol: float
    flags: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def row(self, name: str) -> Optional[AuditRow]:
        return next((r for r in self.rows if r.name == name), None)


# --- Experiments & Registry ---
class PresetInfo(BaseModel):
    name: str
    description: str


class ExperimentSummary(BaseModel):
    name: str
    exit_code: int
    status: str
    iterations: int = 0
    flags: List[str] = Field(default_factory=list)
    final_objective: Optional[float] = None
    final_consensus_error: Optional[float] = None
    trace_path: Optional[str] = None
    audit_path: Optional[str] = None
    audit: Optional[AuditReport] = None
    message: Optional[str] = None


class RunRecord(BaseModel):
    id: int
    name: str
    status: str
    exit_code: int
    iterations: int
    audit_passed: Optional[bool] = None
    trace_path: Optional[str] = None
    created_ts: int
