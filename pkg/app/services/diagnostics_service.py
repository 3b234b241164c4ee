# file: app/services/diagnostics_service.py
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from app.core.config import settings
from app.schemas.models import AuditReport, AuditRow, RateFit
from app.services.engine_service import RunTrace, ergodic_objective

log = logging.getLogger("dgdlab.services.diagnostics")


# --- Rate Fitting ---

def default_window(length: int) -> Tuple[int, int]:
    start = int(length * settings.RATE_WINDOW_FRACTION)
    return start, length


def fit_rate(series: Sequence[float], window: Optional[Tuple[int, int]] = None) -> RateFit:
    """Least-squares line through (log(k+1), log(series_k)) over window [start, stop)."""
    values = np.asarray(series, dtype=float)
    start, stop = window if window is not None else default_window(values.size)
    segment = values[start:stop]
    if segment.size < 2:
        raise ValueError(f"rate window [{start}, {stop}) holds {segment.size} point(s); need at least 2")
    if not np.all(segment > 0) or not np.all(np.isfinite(segment)):
        raise ValueError(f"series must be positive and finite on the window [{start}, {stop})")

    log_k = np.log(np.arange(start, start + segment.size, dtype=float) + 1.0)
    log_v = np.log(segment)
    fit = linregress(log_k, log_v)
    residual = log_v - (fit.intercept + fit.slope * log_k)
    total = float(np.sum((log_v - log_v.mean()) ** 2))
    r_squared = 1.0 if total == 0.0 else 1.0 - float(np.sum(residual ** 2)) / total
    return RateFit(window=(start, start + segment.size), slope=float(fit.slope), intercept=float(fit.intercept), r_squared=r_squared)


def running_best(series: Sequence[float]) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(series, dtype=float))


def running_best_rate(series: Sequence[float]) -> np.ndarray:
    """k * min_{j<=k} series_j, which stays bounded when the running best decays like o(1/k)."""
    best = running_best(series)
    return np.arange(best.size, dtype=float) * best


def tail_dispersion(trace: RunTrace) -> float:
    """Largest distance between two agents at the last iterate."""
    x = trace.x_final
    diffs = x[:, None, :] - x[None, :, :]
    return float(np.max(np.linalg.norm(diffs, axis=2)))


# --- Audit ---

def _row(name: str, violations: np.ndarray, scale: np.ndarray, atol: float, rtol: float) -> AuditRow:
    if violations.size == 0:
        return AuditRow(name=name, checked=0, max_violation=0.0, passed=True)
    excess = violations - (atol + rtol * scale)
    bad = ~np.isfinite(violations)
    worst = float(np.max(np.where(bad, np.inf, violations)))
    return AuditRow(name=name, checked=int(violations.size), max_violation=worst, passed=bool(not bad.any() and np.all(excess <= 0)))


def audit(trace: RunTrace, atol: Optional[float] = None, rtol: Optional[float] = None) -> AuditReport:
    """
    One row per recorded inequality. A violation is the amount by which the
    left-hand side exceeds the right-hand side; a row passes when every
    violation stays within atol + rtol * |scale of the quantity|.
    """
    atol = settings.AUDIT_ATOL if atol is None else atol
    rtol = settings.AUDIT_RTOL if rtol is None else rtol
    rows = []
    steps = slice(1, len(trace))

    residual = trace["descent_residual"][steps]
    gain = trace["descent_gain"][steps]
    uncertified = trace["lyapunov_change"][steps] - trace["allowance"][steps]
    # without a positive certified coefficient the inequality alone promises nothing; require actual descent
    descent = np.where(gain > 0, residual, np.maximum(residual, uncertified))
    lyap_scale = np.abs(trace["lyapunov"][:-1]) if len(trace) > 1 else np.zeros(0)
    rows.append(_row("sufficient_descent", descent, lyap_scale, atol, rtol))

    bound = trace["consensus_bound"]
    rows.append(_row("consensus_recursion_bound", trace["consensus_error"] - bound, np.abs(bound), atol, rtol))

    if trace.schedule.kind == "fixed":
        consensual = trace["consensual_bound"]
        rows.append(_row("consensual_bound", trace["max_agent_deviation"] - consensual, np.abs(consensual), atol, rtol))

    identity = trace["identity_residual"][steps]
    rows.append(_row("averaged_iterate_identity", identity, np.zeros_like(identity), atol, rtol))

    if trace.schedule.kind == "decreasing":
        k = np.arange(max(len(trace) - 1, 0))
        inverse = 1.0 / trace.schedule.sequence(len(trace))
        differences = inverse[k + 1] - inverse[k]
        limits = np.array([trace.schedule.inverse_difference_bound(int(j)) for j in k])
        rows.append(_row("step_inverse_difference", differences - limits, limits, atol, rtol))

    report = AuditReport(rows=rows, atol=atol, rtol=rtol, flags=list(trace.flags))
    for row in rows:
        if not row.passed:
            log.warning(f"Audit row '{row.name}' failed: max violation {row.max_violation:.3e} over {row.checked} iterations")
    return report


# --- Convex Rates ---

@dataclass(frozen=True)
class ConvexRateReport:
    gap: np.ndarray
    envelope: np.ndarray
    holds: bool
    max_excess: float
    d1: float
    d2: float
    d3: float
    d4: float
    gradient_bound: float
    bound_source: str
    step_condition_met: bool
    tail_fit: Optional[RateFit]


def convex_rate_check(
    trace: RunTrace, f_opt: Optional[float], minimizer: Sequence[float], epsilon: Optional[float] = None
) -> ConvexRateReport:
    """
    Compare the ergodic optimality gap with the envelope (D3 + D4 sum a_k^2) / sum a_k, where
        D1 = ||x0|| zeta / (2 (1 - zeta))
        D2 = ||x0|| zeta / 2 + B / (1 - zeta)
        D3 = ||x0 - x_opt||^2 / 2 + B D1
        D4 = B D2
    and B is the declared bound on the directions when the run carries one,
    otherwise the largest direction norm seen along the run.
    """
    if f_opt is None:
        raise ValueError("convex_rate_check needs the optimal value f_opt")
    if trace.iterations < 1:
        raise ValueError("convex_rate_check needs at least one completed iteration")
    if not trace.regularizers_convex or trace.lambda_min <= 0:
        log.warning(f"Convex rate envelope assumes convex terms and lambda_n > 0 (lambda_n={trace.lambda_min:.4g}).")
    if epsilon is not None and trace.schedule.kind == "decreasing" and not math.isclose(epsilon, trace.schedule.epsilon):
        raise ValueError(f"epsilon {epsilon} does not match the run's schedule ({trace.schedule.epsilon})")

    zeta = trace.zeta
    x0 = trace.x0
    x_opt = np.tile(np.asarray(minimizer, dtype=float).reshape(1, -1), (x0.shape[0], 1))
    if trace.direction_bound is not None:
        b, bound_source = trace.direction_bound, "declared"
    else:
        # B must dominate the direction norm at every iterate the proof touches, x^0 .. x^K
        directions = trace["direction_norm"][~np.isnan(trace["direction_norm"])]
        b, bound_source = float(max(np.max(directions), trace["grad_norm"][-1])), "empirical"
    x0_norm = float(np.linalg.norm(x0))

    d1 = x0_norm * zeta / (2.0 * (1.0 - zeta))
    d2 = x0_norm * zeta / 2.0 + b / (1.0 - zeta)
    d3 = 0.5 * float(np.sum((x0 - x_opt) ** 2)) + b * d1
    d4 = b * d2

    alphas = trace["alpha"][:-1]
    envelope = (d3 + d4 * np.cumsum(alphas ** 2)) / np.cumsum(alphas)
    gap = ergodic_objective(trace) - f_opt
    excess = gap - envelope
    max_excess = float(np.max(excess))
    step_condition_met = bool(trace.lambda_min > 0 and np.all(alphas <= trace.lambda_min / trace.lipschitz))

    tail_fit = None
    try:
        tail_fit = fit_rate(gap)
    except ValueError as e:
        log.info(f"Gap tail not fitted: {e}")

    holds = bool(max_excess <= settings.AUDIT_ATOL + settings.AUDIT_RTOL * float(np.max(np.abs(envelope))))
    return ConvexRateReport(
        gap=gap,
        envelope=envelope,
        holds=holds,
        max_excess=max_excess,
        d1=d1,
        d2=d2,
        d3=d3,
        d4=d4,
        gradient_bound=b,
        bound_source=bound_source,
        step_condition_met=step_condition_met,
        tail_fit=tail_fit,
    )
