# file: app/services/engine_service.py
"""
DGD and Prox-DGD over stacked local iterates.

An iterate is an n x p matrix whose row i is agent i's local copy. One DGD
step mixes with neighbours and takes a local gradient step,

    x+ = W x - alpha * grad f(x),

which is exactly a gradient step on the Lyapunov function
L_alpha(x) = sum_i f_i(x_i) + 1/(2 alpha) <x, (I - W) x>. Prox-DGD follows the
same step with the per-agent proximal map and exposes the subgradient xi
that the prox implicitly picked.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from app.core.errors import DimensionMismatchError, NonFiniteIterateError
from app.services.network_service import SPECTRUM_TOL, MixingSpec, safe_step_bounds
from app.services.objective_service import StackedObjective
from app.services.regularizer_service import Regularizer, stacked_prox, stacked_value
from app.services.schedule_service import StepSchedule

log = logging.getLogger("dgdlab.services.engine")

IterateMatrix = np.ndarray

# iterate buffers are flushed into the trace columns at about this size
TRACE_CHUNK_BYTES = 1 << 23

# --- Trace Columns ---
TRACE_COLUMNS = (
    "k",
    "alpha",
    "objective",
    "lyapunov",
    "consensus_error",
    "step_norm",
    "avg_grad_norm",
    "descent_residual",
    "semi_norm",
    "grad_norm",
    "consensus_bound",
    "average_objective",
    "lyapunov_change",
    "allowance",
    "descent_gain",
    "max_agent_deviation",
    "consensual_bound",
    "identity_residual",
    "direction_norm",
)


@dataclass(frozen=True)
class ProblemSpec:
    objective: StackedObjective
    regularizers: Optional[Tuple[Regularizer, ...]] = None

    def __post_init__(self) -> None:
        if self.regularizers is not None and len(self.regularizers) != self.objective.n:
            raise DimensionMismatchError(
                f"{len(self.regularizers)} regularizers for {self.objective.n} agents"
            )

    @property
    def composite(self) -> bool:
        return self.regularizers is not None

    @property
    def regularizers_convex(self) -> bool:
        return self.regularizers is None or all(r.convex for r in self.regularizers)


@dataclass(frozen=True)
class StopRule:
    max_iterations: int
    step_floor: float = 0.0

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be nonnegative, got {self.max_iterations}")
        if self.step_floor < 0:
            raise ValueError(f"step_floor must be nonnegative, got {self.step_floor}")


@dataclass
class RunTrace:
    """Per-iteration records; record k describes the iterate x^k."""
    columns: Dict[str, np.ndarray]
    flags: Tuple[str, ...]
    algorithm: str
    schedule: StepSchedule
    zeta: float
    lambda_min: float
    lipschitz: float
    regularizers_convex: bool
    x0: np.ndarray
    x_final: np.ndarray
    xi_final: Optional[np.ndarray] = None
    failure: Optional[str] = None
    iterates: Optional[np.ndarray] = None
    gradients: Optional[np.ndarray] = None
    subgradients: Optional[np.ndarray] = None
    direction_bound: Optional[float] = None  # declared bound on ||grad f + xi||, when known

    def __len__(self) -> int:
        return int(self.columns["k"].size)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def iterations(self) -> int:
        return len(self) - 1

    @property
    def regime(self) -> str:
        return "|".join(self.flags)


def as_iterate(x: Sequence[Sequence[float]] | np.ndarray, n: int, p: int) -> IterateMatrix:
    arr = np.array(x, dtype=float)
    if arr.shape != (n, p):
        raise DimensionMismatchError(f"iterate has shape {arr.shape}, expected ({n}, {p})")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteIterateError(arr)
    return arr


def _check_step(x: IterateMatrix, mix: MixingSpec, alpha: float) -> None:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if x.shape[0] != mix.n:
        raise DimensionMismatchError(f"iterate has {x.shape[0]} rows for a {mix.n}-agent network")


def _advance(
    wx: IterateMatrix, grad: IterateMatrix, regs: Optional[Sequence[Regularizer]], alpha: float
) -> Optional[Tuple[IterateMatrix, Optional[IterateMatrix]]]:
    """(x+, xi) from the mixed iterate W x, or None once the step leaves the finite reals."""
    y = wx - alpha * grad
    if not np.isfinite(y).all():
        return None
    if regs is None:
        return y, None
    x_plus = stacked_prox(regs, y, alpha)
    if not np.isfinite(x_plus).all():
        return None
    return x_plus, (y - x_plus) / alpha


def dgd_step(
    x: IterateMatrix, mix: MixingSpec, obj: StackedObjective, alpha: float, grad: Optional[np.ndarray] = None
) -> IterateMatrix:
    _check_step(x, mix, alpha)
    if grad is None:
        grad = obj.stacked_gradient(x)
    out = _advance(mix.mix(x), grad, None, alpha)
    if out is None:
        raise NonFiniteIterateError(x.copy())
    return out[0]


def proxdgd_step(
    x: IterateMatrix,
    mix: MixingSpec,
    obj: StackedObjective,
    regs: Sequence[Regularizer],
    alpha: float,
    grad: Optional[np.ndarray] = None,
) -> Tuple[IterateMatrix, IterateMatrix]:
    """Returns (x+, xi) with x+ = W x - alpha * (grad f(x) + xi)."""
    _check_step(x, mix, alpha)
    if grad is None:
        grad = obj.stacked_gradient(x)
    out = _advance(mix.mix(x), grad, regs, alpha)
    if out is None:
        raise NonFiniteIterateError(x.copy())
    return out


# --- Lyapunov Functions ---

def composite_value(x: np.ndarray, obj: StackedObjective, regs: Optional[Sequence[Regularizer]] = None) -> float | np.ndarray:
    """sum_i f_i(x_i) (+ r_i(x_i)); one total per iterate when x is a batch."""
    total = obj.stacked_value(x)
    if regs is not None:
        total = total + stacked_value(regs, x)
    return total


def penalized_value(values: float | np.ndarray, semi: float | np.ndarray, alpha: float | np.ndarray) -> float | np.ndarray:
    return values + semi / (2.0 * alpha)


def lyapunov_gradient(x: IterateMatrix, mix: MixingSpec, obj: StackedObjective, alpha: float) -> IterateMatrix:
    return obj.stacked_gradient(x) + (x - mix.mix(x)) / alpha


def lyapunov(x: IterateMatrix, mix: MixingSpec, obj: StackedObjective, alpha: float) -> float:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return penalized_value(composite_value(x, obj), mix.semi_norm_sq(x), alpha)


def composite_lyapunov(
    x: IterateMatrix, mix: MixingSpec, obj: StackedObjective, regs: Sequence[Regularizer], alpha: float
) -> float:
    """L_alpha plus sum_i r_i(x_i); +inf off an indicator's feasible set."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return penalized_value(composite_value(x, obj, regs), mix.semi_norm_sq(x), alpha)


def unrolled_iterate(
    mix: MixingSpec, x0: IterateMatrix, alphas: Sequence[float], directions: Sequence[np.ndarray], k: int
) -> IterateMatrix:
    """W^k x0 - sum_{j<k} alpha_j W^{k-1-j} d_j, with d_j = grad f(x^j) (+ xi^{j+1})."""
    powers = [np.eye(mix.n)]
    for _ in range(k):
        powers.append(mix.weights @ powers[-1])
    out = powers[k] @ x0
    for j in range(k):
        out = out - alphas[j] * (powers[k - 1 - j] @ directions[j])
    return out


def ergodic_average(alphas: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """Running alpha-weighted averages sum_{k<=K} alpha_k v_k / sum_{k<=K} alpha_k."""
    a = np.asarray(alphas, dtype=float)
    v = np.asarray(values, dtype=float)
    if a.size == 0 or a.size != v.size:
        raise ValueError(f"need matching, nonempty step and value sequences (got {a.size} and {v.size})")
    return np.cumsum(a * v) / np.cumsum(a)


def ergodic_objective(trace: RunTrace) -> np.ndarray:
    """
    Ergodic objective at the averaged iterates: entry K pairs alpha_k with the
    objective at xbar^{k+1}, for K = 0 .. iterations - 1. For composite runs the
    recorded value already includes the regularizers.
    """
    if trace.iterations < 1:
        raise ValueError("ergodic objective needs at least one completed iteration")
    return ergodic_average(trace["alpha"][:-1], trace["average_objective"][1:])


def declared_direction_bound(problem: ProblemSpec) -> Optional[float]:
    """sqrt(sum_i (B_i + B_ri)^2) from declared gradient and subgradient bounds, if every agent has them."""
    obj = problem.objective
    bounds = obj.gradient_bounds
    if bounds is None:
        return None
    if problem.regularizers is not None:
        extra = [r.subgradient_bound(obj.dimension) for r in problem.regularizers]
        if any(b is None for b in extra):
            return None
        bounds = bounds + np.asarray(extra, dtype=float)
    return float(np.linalg.norm(bounds))


# --- Trace Recording ---

class _TraceRecorder:
    """Buffers iterates and fills the per-record columns a chunk at a time."""

    def __init__(self, problem: ProblemSpec, mix: MixingSpec, alphas: np.ndarray, capacity: int):
        self.obj = problem.objective
        self.regs = problem.regularizers
        self.mix = mix
        self.alphas = alphas
        n, p = self.obj.n, self.obj.dimension
        self.columns = {name: np.full(capacity, np.nan) for name in TRACE_COLUMNS}
        self.count = 0
        size = max(1, min(capacity - 1, TRACE_CHUNK_BYTES // (8 * n * p)))
        self._x = np.empty((size, n, p))
        self._g = np.empty((size, n, p))
        self._xi = np.empty((size, n, p)) if self.regs is not None else None
        self._fill = 0
        self._last_x: Optional[np.ndarray] = None
        self._last_g: Optional[np.ndarray] = None
        self._last_xbar: Optional[np.ndarray] = None

    def _average_values(self, xbar: np.ndarray) -> np.ndarray:
        total = self.obj.consensual_value(xbar)
        if self.regs is not None:
            shared = np.broadcast_to(xbar[:, None, :], (xbar.shape[0], self.obj.n, self.obj.dimension))
            total = total + stacked_value(self.regs, shared)
        return total

    def _fill_state(self, at: slice, X: np.ndarray, G: np.ndarray, XI: Optional[np.ndarray]) -> np.ndarray:
        # columns that depend on each iterate alone
        cols = self.columns
        xbar = X.mean(axis=1)
        dev = X - xbar[:, None, :]
        cols["objective"][at] = composite_value(X, self.obj, self.regs)
        cols["semi_norm"][at] = self.mix.semi_norm_sq(X)
        cols["consensus_error"][at] = np.linalg.norm(dev, axis=(1, 2))
        cols["max_agent_deviation"][at] = np.linalg.norm(dev, axis=2).max(axis=1)
        cols["grad_norm"][at] = np.linalg.norm(G, axis=(1, 2))
        avg = G if XI is None else G + XI
        cols["avg_grad_norm"][at] = np.linalg.norm(avg.mean(axis=1), axis=1)
        cols["average_objective"][at] = self._average_values(xbar)
        return xbar

    def start(self, x: IterateMatrix, grad: IterateMatrix) -> None:
        xbar = self._fill_state(slice(0, 1), x[None], grad[None], None)
        self.columns["step_norm"][0] = 0.0
        self.count = 1
        self._last_x, self._last_g, self._last_xbar = x.copy(), grad.copy(), xbar[0]

    def push(self, x: IterateMatrix, grad: IterateMatrix, xi: Optional[IterateMatrix]) -> None:
        i = self._fill
        self._x[i] = x
        self._g[i] = grad
        if xi is not None:
            self._xi[i] = xi
        self._fill = i + 1
        if self._fill == self._x.shape[0]:
            self.flush()

    def flush(self) -> None:
        b = self._fill
        if b == 0:
            return
        cols = self.columns
        X, G = self._x[:b], self._g[:b]
        XI = None if self._xi is None else self._xi[:b]
        at = slice(self.count, self.count + b)
        outgoing = slice(self.count - 1, self.count - 1 + b)
        xbar = self._fill_state(at, X, G, XI)

        # step j of the chunk leaves the previous record along d = grad f(x) (+ xi of the new iterate)
        X_prev = np.concatenate([self._last_x[None], X[:-1]])
        G_prev = np.concatenate([self._last_g[None], G[:-1]])
        D = G_prev if XI is None else G_prev + XI
        xbar_prev = np.concatenate([self._last_xbar[None], xbar[:-1]])
        a = self.alphas[outgoing]
        cols["step_norm"][at] = np.linalg.norm(X - X_prev, axis=(1, 2))
        cols["direction_norm"][outgoing] = np.linalg.norm(D, axis=(1, 2))
        cols["identity_residual"][at] = np.linalg.norm(xbar - xbar_prev + a[:, None] * D.mean(axis=1), axis=1)

        self._last_x, self._last_g, self._last_xbar = X[-1].copy(), G[-1].copy(), xbar[-1]
        self.count += b
        self._fill = 0

    def finish(self, mu: float, lip: float, zeta: float, x0_norm: float, fixed: bool) -> Dict[str, np.ndarray]:
        """Truncates to the recorded length and derives the Lyapunov and bound columns."""
        self.flush()
        size = self.count
        cols = {name: col[:size].copy() for name, col in self.columns.items()}
        cols["k"] = np.arange(size)
        alpha = self.alphas[:size].copy()
        cols["alpha"] = alpha
        cols["lyapunov"] = lyap = penalized_value(cols["objective"], cols["semi_norm"], alpha)
        cols["consensus_bound"][0] = x0_norm
        if fixed:
            cols["consensual_bound"][0] = x0_norm
        if size < 2:
            return cols

        # record k+1 re-evaluated with the step alpha_k that produced it
        used = alpha[:-1]
        same = penalized_value(cols["objective"][1:], cols["semi_norm"][1:], used)
        gain = mu / used - lip
        cols["descent_residual"][1:] = same - lyap[:-1] + 0.5 * gain * cols["step_norm"][1:] ** 2
        cols["lyapunov_change"][1:] = np.diff(lyap)
        cols["allowance"][1:] = lyap[1:] - same
        cols["descent_gain"][1:] = gain

        worst = np.maximum.accumulate(cols["direction_norm"][:-1])
        accumulated = lfilter([1.0], [1.0, -zeta], used)  # sum_{j<=k} alpha_j zeta^(k-j)
        powers = zeta ** np.arange(1, size)
        cols["consensus_bound"][1:] = powers * x0_norm + worst * accumulated
        if fixed:
            cols["consensual_bound"][1:] = used * worst / (1.0 - zeta) + powers * x0_norm
        return cols


class EngineService:
    """Runs DGD / Prox-DGD and records every quantity the diagnostics audit."""

    def run(
        self,
        problem: ProblemSpec,
        mix: MixingSpec,
        schedule: StepSchedule,
        x0: IterateMatrix,
        stop: StopRule,
        keep_iterates: bool = False,
    ) -> RunTrace:
        obj = problem.objective
        regs = problem.regularizers
        if mix.n != obj.n:
            raise DimensionMismatchError(f"network has {mix.n} agents, objective has {obj.n}")
        x = as_iterate(x0, obj.n, obj.dimension)
        lip = obj.lipschitz
        nonconvex = not problem.regularizers_convex
        # certified descent coefficient uses lambda_n for nonconvex regularizers, 1 + lambda_n otherwise
        mu = mix.lambda_min if nonconvex else 1.0 + mix.lambda_min

        flags = {schedule.kind}
        if nonconvex and mix.lambda_min <= SPECTRUM_TOL:
            flags.add("outside_nonconvex_prox_regime")
            log.warning(f"Nonconvex regularizers with lambda_n={mix.lambda_min:.4g} <= 0: running outside the nonconvex proximal regime.")
        if schedule.kind == "fixed":
            bounds = safe_step_bounds(mix, lip)
            bound = bounds.prox_nonconvex if nonconvex else bounds.dgd
            flags.add("safe" if bound is not None and schedule.alpha < bound else "unsafe")
        algorithm = "proxdgd" if problem.composite else "dgd"

        max_iterations = stop.max_iterations
        alphas = schedule.sequence(max_iterations)
        steps = alphas.tolist()
        recorder = _TraceRecorder(problem, mix, alphas, max_iterations + 1)
        grad = obj.stacked_gradient(x)
        recorder.start(x, grad)
        wx = mix.mix(x)
        xi: Optional[IterateMatrix] = None

        iterates = [x.copy()] if keep_iterates else None
        gradients = [grad.copy()] if keep_iterates else None
        subgradients = [np.zeros_like(x)] if keep_iterates else None
        failure: Optional[str] = None
        completed = 0

        log.info(
            f"Starting {algorithm} run: n={obj.n}, p={obj.dimension}, K={max_iterations}, "
            f"schedule={schedule.kind}, flags={sorted(flags)}"
        )
        for k in range(max_iterations):
            out = _advance(wx, grad, regs, steps[k])
            if out is None:
                failure = f"nonfinite iterate at k={k + 1}"
                flags.add("nonfinite")
                log.error(f"Run aborted: {failure}; trace truncated at k={k}.")
                break
            x_new, xi = out
            grad_new = obj.stacked_gradient(x_new)
            recorder.push(x_new, grad_new, xi)
            if keep_iterates:
                iterates.append(x_new.copy())
                gradients.append(grad_new.copy())
                subgradients.append(xi.copy() if xi is not None else np.zeros_like(x_new))

            step = float(np.linalg.norm(x_new - x)) if stop.step_floor > 0 else None
            x, grad = x_new, grad_new
            wx = mix.mix(x)
            completed = k + 1
            if step is not None and step <= stop.step_floor:
                log.info(f"Step norm {step:.3e} fell below the floor {stop.step_floor:.3e} at k={completed}.")
                break

        columns = recorder.finish(mu, lip, mix.zeta, float(np.linalg.norm(x0)), schedule.kind == "fixed")
        log.info(
            f"Finished {algorithm} run at k={completed}: consensus_error={columns['consensus_error'][-1]:.3e}, "
            f"objective={columns['objective'][-1]:.6g}"
        )
        return RunTrace(
            columns=columns,
            flags=tuple(sorted(flags)),
            algorithm=algorithm,
            schedule=schedule,
            zeta=mix.zeta,
            lambda_min=mix.lambda_min,
            lipschitz=lip,
            regularizers_convex=problem.regularizers_convex,
            x0=np.array(x0, dtype=float),
            x_final=x.copy(),
            xi_final=None if xi is None else xi.copy(),
            failure=failure,
            iterates=np.array(iterates) if keep_iterates else None,
            gradients=np.array(gradients) if keep_iterates else None,
            subgradients=np.array(subgradients) if keep_iterates else None,
            direction_bound=declared_direction_bound(problem),
        )
