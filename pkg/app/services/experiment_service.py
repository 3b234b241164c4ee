# file: app/services/experiment_service.py
import csv
import json
import logging
import pathlib
from typing import List, Optional, Tuple

import numpy as np
import yaml
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigError, DgdLabError, DimensionMismatchError
from app.db.registry import record_run
from app.schemas.models import (
    AuditReport,
    ExperimentSummary,
    InitialConfig,
    NetworkConfig,
    ProblemConfig,
    RegularizerConfig,
    RunConfig,
    StepConfig,
)
from app.services import diagnostics_service
from app.services.engine_service import EngineService, ProblemSpec, RunTrace, StopRule, as_iterate
from app.services.network_service import TOPOLOGIES, Graph, MixingSpec, build_metropolis, from_matrix, safe_step_bounds
from app.services.objective_service import (
    QuadraticKernel,
    StackedObjective,
    decentralized_least_squares,
    paper_toy_problem,
    stacked_quadratic,
    zero_objective,
)
from app.services.regularizer_service import Regularizer
from app.services.schedule_service import StepSchedule, make_decreasing, make_fixed, make_fixed_fraction

log = logging.getLogger("dgdlab.services.experiment")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_NONFINITE = 3
EXIT_AUDIT = 4

# leading CSV columns, then the regime flags, then the supplementary per-iteration records
CSV_LEADING = ("k", "alpha", "objective", "lyapunov", "consensus_error", "step_norm", "avg_grad_norm", "descent_residual")
CSV_TRAILING = ("semi_norm", "grad_norm", "consensus_bound", "average_objective")
CSV_HEADER = CSV_LEADING + ("regime",) + CSV_TRAILING


# --- Config Loading ---

def load_config(path: str | pathlib.Path) -> RunConfig:
    """Reads a RunConfig from a JSON file, or YAML when the extension says so."""
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = yaml.safe_load(text) if path.suffix.lower() in (".yaml", ".yml") else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e


# --- Builders ---

def build_objective(cfg: ProblemConfig) -> StackedObjective:
    if cfg.objective == "paper_toy":
        if cfg.agents not in (None, 3) or cfg.dimension != 1:
            raise ConfigError("paper_toy is fixed at 3 agents in dimension 1")
        return paper_toy_problem(cfg.variant)
    if cfg.agents is None:
        raise ConfigError(f"objective '{cfg.objective}' needs 'agents'")
    n, p = cfg.agents, cfg.dimension
    if cfg.objective == "least_squares":
        objective, _, _ = decentralized_least_squares(cfg.seed, n, p, cfg.rows_per_agent, cfg.sparsity, cfg.noise_std)
        return objective
    if cfg.objective == "quadratic":
        centers = np.array(cfg.centers, dtype=float) if cfg.centers is not None else np.outer(np.arange(n), np.ones(p))
        if centers.shape != (n, p):
            raise DimensionMismatchError(f"centers have shape {centers.shape}, expected ({n}, {p})")
        return stacked_quadratic(centers, cfg.curvature)
    return StackedObjective(tuple(zero_objective(p) for _ in range(n)), kernel=QuadraticKernel(np.zeros((n, p)), 0.0))


def build_regularizer(cfg: RegularizerConfig) -> Regularizer:
    lo = -np.inf if cfg.lo is None else cfg.lo
    hi = np.inf if cfg.hi is None else cfg.hi
    return Regularizer(cfg.kind, lam=cfg.lam, q=cfg.q, a=cfg.a, gamma=cfg.gamma, lo=lo, hi=hi, radius=cfg.radius)


def build_regularizers(
    cfg: Optional[RegularizerConfig | List[RegularizerConfig]], n: int
) -> Optional[Tuple[Regularizer, ...]]:
    if cfg is None:
        return None
    if isinstance(cfg, list):
        if len(cfg) != n:
            raise DimensionMismatchError(f"{len(cfg)} regularizers listed for {n} agents")
        return tuple(build_regularizer(c) for c in cfg)
    return (build_regularizer(cfg),) * n


def build_network(cfg: NetworkConfig, n: int) -> MixingSpec:
    if cfg.matrix is not None:
        graph = Graph.from_edges(len(cfg.matrix), cfg.edges) if cfg.edges is not None else None
        mix = from_matrix(cfg.matrix, graph)
    elif cfg.topology is not None:
        mix = build_metropolis(TOPOLOGIES[cfg.topology](cfg.nodes), lazy=cfg.lazy)
    else:
        mix = build_metropolis(Graph.from_edges(cfg.nodes, cfg.edges), lazy=cfg.lazy)
    if mix.n != n:
        raise DimensionMismatchError(f"network has {mix.n} agents, objective has {n}")
    return mix


def build_schedule(cfg: StepConfig, mix: MixingSpec, problem: ProblemSpec) -> StepSchedule:
    lipschitz = problem.objective.lipschitz
    if cfg.kind == "decreasing":
        return make_decreasing(cfg.epsilon, lipschitz, cfg.numerator)
    bounds = safe_step_bounds(mix, lipschitz)
    bound = bounds.dgd if problem.regularizers_convex else bounds.prox_nonconvex
    if cfg.safe_fraction is not None:
        if bound is None:
            raise ConfigError(
                f"safe_fraction needs a safe bound, but lambda_n = {mix.lambda_min:.4g} leaves none for nonconvex regularizers"
            )
        return make_fixed_fraction(cfg.safe_fraction, bound)
    return make_fixed(cfg.alpha, bound)


def build_initial(cfg: InitialConfig, n: int, p: int) -> np.ndarray:
    if cfg.kind == "zeros":
        return np.zeros((n, p))
    if cfg.kind == "constant":
        return np.full((n, p), cfg.value)
    if cfg.kind == "rows":
        return as_iterate(cfg.rows, n, p)
    return cfg.scale * np.random.default_rng(cfg.seed).standard_normal((n, p))


# --- Persistence ---

def write_trace_csv(trace: RunTrace, path: pathlib.Path) -> None:
    digits = settings.CSV_SIGNIFICANT_DIGITS
    regime = trace.regime
    leading = [trace[name] for name in CSV_LEADING[1:]]
    trailing = [trace[name] for name in CSV_TRAILING]

    def cells(cols: List[np.ndarray], i: int) -> List[str]:
        return [f"{col[i]:.{digits}g}" for col in cols]

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i, k in enumerate(trace["k"]):
            writer.writerow([str(int(k))] + cells(leading, i) + [regime] + cells(trailing, i))


def read_trace_csv(path: str | pathlib.Path) -> Tuple[List[str], np.ndarray, List[str]]:
    """Header, numeric columns (regime dropped) and the per-row regime strings."""
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [row for row in reader if row]
    at = header.index("regime")
    regimes = [row[at] for row in rows]
    values = np.array([[float(v) for j, v in enumerate(row) if j != at] for row in rows], dtype=float)
    return [h for h in header if h != "regime"], values.reshape(len(rows), len(header) - 1), regimes


def write_audit_json(report: AuditReport, path: pathlib.Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.model_dump()
    payload["passed"] = report.passed
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def write_report_yaml(summary: ExperimentSummary, config: RunConfig, path: pathlib.Path) -> None:
    report = {
        "name": summary.name,
        "description": config.description,
        "status": summary.status,
        "exit_code": summary.exit_code,
        "iterations": summary.iterations,
        "flags": summary.flags,
        "final_objective": summary.final_objective,
        "final_consensus_error": summary.final_consensus_error,
        "trace_csv": summary.trace_path,
        "audit_json": summary.audit_path,
        "audit": {row.name: {"passed": row.passed, "max_violation": row.max_violation} for row in summary.audit.rows}
        if summary.audit is not None
        else None,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(report, f, default_flow_style=False, sort_keys=False)
    log.info(f"Wrote run report: {path}")


class ExperimentService:
    """Turns RunConfigs into persisted traces, audit reports and registry rows."""

    def __init__(self, engine: Optional[EngineService] = None, record: bool = True):
        self.engine = engine or EngineService()
        self.record = record

    def _paths(self, config: RunConfig, out_dir: Optional[str]) -> Tuple[pathlib.Path, pathlib.Path, Optional[pathlib.Path]]:
        base = pathlib.Path(out_dir or settings.OUTPUT_DIR)
        trace = pathlib.Path(config.output.trace_csv) if config.output.trace_csv else base / f"{config.name}.trace.csv"
        audit = pathlib.Path(config.output.audit_json) if config.output.audit_json else base / f"{config.name}.audit.json"
        report = pathlib.Path(config.output.report_yaml) if config.output.report_yaml else None
        if out_dir is not None:
            trace, audit = base / trace.name, base / audit.name
            report = base / report.name if report is not None else None
        return trace, audit, report

    def prepare(self, config: RunConfig) -> Tuple[ProblemSpec, MixingSpec, StepSchedule, np.ndarray, StopRule]:
        objective = build_objective(config.problem)
        problem = ProblemSpec(objective, build_regularizers(config.reg, objective.n))
        mix = build_network(config.network, objective.n)
        schedule = build_schedule(config.step, mix, problem)
        x0 = build_initial(config.x0, objective.n, objective.dimension)
        return problem, mix, schedule, x0, StopRule(config.iterations, config.step_floor)

    def run(self, config: RunConfig, out_dir: Optional[str] = None, strict: bool = False) -> Tuple[ExperimentSummary, Optional[RunTrace]]:
        log.info(f"Running experiment '{config.name}' (K={config.iterations})")
        try:
            problem, mix, schedule, x0, stop = self.prepare(config)
        except (DgdLabError, ValueError) as e:
            log.error(f"Experiment '{config.name}' rejected: {e}")
            summary = ExperimentSummary(name=config.name, exit_code=EXIT_CONFIG, status="invalid", message=str(e))
            self._record(config, summary)
            return summary, None

        trace = self.engine.run(problem, mix, schedule, x0, stop)
        trace_path, audit_path, report_path = self._paths(config, out_dir)
        write_trace_csv(trace, trace_path)
        report = diagnostics_service.audit(trace)
        write_audit_json(report, audit_path)

        if trace.failure is not None:
            exit_code, status = EXIT_NONFINITE, "nonfinite"
        elif strict and not report.passed:
            exit_code, status = EXIT_AUDIT, "audit_failed"
        else:
            exit_code, status = EXIT_OK, "completed"

        summary = ExperimentSummary(
            name=config.name,
            exit_code=exit_code,
            status=status,
            iterations=trace.iterations,
            flags=list(trace.flags),
            final_objective=float(trace["objective"][-1]),
            final_consensus_error=float(trace["consensus_error"][-1]),
            trace_path=str(trace_path),
            audit_path=str(audit_path),
            audit=report,
            message=trace.failure,
        )
        if report_path is not None:
            write_report_yaml(summary, config, report_path)
        self._record(config, summary)
        log.info(f"Experiment '{config.name}' finished with status {status} (exit {exit_code}); trace at {trace_path}")
        return summary, trace

    def _record(self, config: RunConfig, summary: ExperimentSummary) -> None:
        if not self.record:
            return
        record_run(
            name=summary.name,
            config_json=config.model_dump_json(by_alias=True),
            status=summary.status,
            exit_code=summary.exit_code,
            iterations=summary.iterations,
            trace_path=summary.trace_path,
            audit_path=summary.audit_path,
            audit_passed=None if summary.audit is None else summary.audit.passed,
        )
