# file: app/services/objective_service.py
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from scipy.linalg import lstsq

from app.core.errors import DimensionMismatchError, ObjectiveError

log = logging.getLogger("dgdlab.services.objective")

# --- Toy Problem Constants ---
TOY_JUNCTION = 10.0
# Lipschitz constants as printed alongside the toy problem; f2'' reaches 652 at x = -10, |f3''| = |6x| peaks at 60.
PRINTED_TOY_LIPSCHITZ = (1288.0, 532.0, 60.0)
TOY_LIPSCHITZ = (1288.0, 652.0, 60.0)
TOY_GRADIENT_BOUNDS = (4248.0, 2220.0, 288.0)

ToyVariant = Literal["continuous", "printed"]


@dataclass(frozen=True)
class SmoothObjective:
    dimension: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    gradient_bound: Optional[float] = None
    convex: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ObjectiveError(f"dimension must be positive, got {self.dimension}")
        if not self.lipschitz > 0:
            raise ObjectiveError(f"{self.name or 'objective'}: Lipschitz constant must be positive, got {self.lipschitz}")


class StackedKernel(Protocol):
    """Evaluates every agent at once on iterates shaped (..., n, p)."""

    def values(self, x: np.ndarray) -> np.ndarray: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class StackedObjective:
    agents: Tuple[SmoothObjective, ...]
    kernel: Optional[StackedKernel] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.agents:
            raise ObjectiveError("a stacked objective needs at least one agent")
        dims = {a.dimension for a in self.agents}
        if len(dims) != 1:
            raise DimensionMismatchError(f"agents disagree on dimension: {sorted(dims)}")

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def dimension(self) -> int:
        return self.agents[0].dimension

    @property
    def lipschitz(self) -> float:
        """L_f, the largest member constant."""
        return max(a.lipschitz for a in self.agents)

    @property
    def convex(self) -> bool:
        return all(a.convex for a in self.agents)

    @property
    def gradient_bounds(self) -> Optional[np.ndarray]:
        """Per-agent bounds on ||grad f_i||, or None when any agent declares none."""
        bounds = [a.gradient_bound for a in self.agents]
        if any(b is None for b in bounds):
            return None
        return np.asarray(bounds, dtype=float)

    def check_shape(self, x: np.ndarray) -> None:
        if x.ndim != 2 or x.shape != (self.n, self.dimension):
            raise DimensionMismatchError(f"iterate has shape {x.shape}, expected ({self.n}, {self.dimension})")

    def agent_values(self, x: np.ndarray) -> np.ndarray:
        """f_i(x_i) for every agent; leading batch axes are kept."""
        x = np.asarray(x, dtype=float)
        if x.ndim < 2 or x.shape[-2:] != (self.n, self.dimension):
            raise DimensionMismatchError(f"iterate has shape {x.shape}, expected (..., {self.n}, {self.dimension})")
        if self.kernel is not None:
            return self.kernel.values(x)
        flat = x.reshape((-1, self.n, self.dimension))
        out = np.array([[agent.value(row[i]) for i, agent in enumerate(self.agents)] for row in flat])
        return out.reshape(x.shape[:-2] + (self.n,))

    def stacked_value(self, x: np.ndarray) -> float | np.ndarray:
        """1^T f(x); a float for one iterate, one total per iterate for a batch."""
        totals = self.agent_values(x).sum(axis=-1)
        return float(totals) if np.ndim(totals) == 0 else totals

    def stacked_gradient(self, x: np.ndarray) -> np.ndarray:
        self.check_shape(x)
        if self.kernel is not None:
            return self.kernel.gradient(x)
        out = np.empty_like(x, dtype=float)
        for i, agent in enumerate(self.agents):
            out[i] = agent.gradient(x[i])
        return out

    def consensual_value(self, u: np.ndarray) -> float | np.ndarray:
        """f(u) = sum_i f_i(u) at a point shared by all agents; u may be (p,) or (batch, p)."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.dimension:
            u = u.reshape(self.dimension)
        shared = np.broadcast_to(u[..., None, :], u.shape[:-1] + (self.n, self.dimension))
        return self.stacked_value(shared)


@dataclass(frozen=True, eq=False)
class PolynomialCoreKernel:
    """Toy agents as padded coefficient rows; linear continuation past +-10."""
    coef: np.ndarray  # (n, degree + 1), ascending
    slope_coef: np.ndarray  # (n, degree)
    right: np.ndarray  # (n, 2) slope, intercept
    left: np.ndarray  # (n, 2)

    @classmethod
    def from_pieces(cls, pieces: Sequence["PiecewiseCubic"]) -> "PolynomialCoreKernel":
        width = max(p.core.coef.size for p in pieces)
        coef = np.zeros((len(pieces), width))
        slope = np.zeros((len(pieces), width - 1))
        for i, piece in enumerate(pieces):
            coef[i, : piece.core.coef.size] = piece.core.coef
            d = piece.core.deriv().coef
            slope[i, : d.size] = d
        right = np.array([p.right for p in pieces], dtype=float)
        left = np.array([p.left for p in pieces], dtype=float)
        # the clipped-core gradient is only exact when the linear pieces continue the slope
        edge_slopes = np.stack([_horner(slope, np.full(len(pieces), TOY_JUNCTION)), _horner(slope, np.full(len(pieces), -TOY_JUNCTION))])
        if not np.allclose(edge_slopes, np.stack([right[:, 0], left[:, 0]]), rtol=0.0, atol=1e-9):
            raise ObjectiveError("linear continuations must match the core slope at the junctions")
        return cls(coef, slope, right, left)

    def values(self, x: np.ndarray) -> np.ndarray:
        t = x[..., 0]
        core = _horner(self.coef, np.minimum(np.maximum(t, -TOY_JUNCTION), TOY_JUNCTION))
        above = self.right[:, 0] * t + self.right[:, 1]
        below = self.left[:, 0] * t + self.left[:, 1]
        return np.where(t > TOY_JUNCTION, above, np.where(t < -TOY_JUNCTION, below, core))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        t = np.minimum(np.maximum(x[..., 0], -TOY_JUNCTION), TOY_JUNCTION)
        return _horner(self.slope_coef, t)[..., None]


def _horner(coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Row i of coef evaluated at t[..., i], same recursion as polyval."""
    acc = coef[:, -1] * t + coef[:, -2]
    for j in range(coef.shape[1] - 3, -1, -1):
        acc *= t
        acc += coef[:, j]
    return acc


# --- Piecewise Cubic Toy Problem ---

@dataclass(frozen=True)
class PiecewiseCubic:
    """A polynomial core on |x| <= 10 continued by linear pieces on either side."""
    core: Polynomial
    right: Tuple[float, float]  # slope, intercept for x > 10
    left: Tuple[float, float]  # slope, intercept for x < -10

    def __post_init__(self) -> None:
        object.__setattr__(self, "_coef", self.core.coef.copy())
        object.__setattr__(self, "_slope_coef", self.core.deriv().coef.copy())

    def value(self, t: float) -> float:
        if t > TOY_JUNCTION:
            return self.right[0] * t + self.right[1]
        if t < -TOY_JUNCTION:
            return self.left[0] * t + self.left[1]
        return float(P.polyval(t, self._coef))

    def derivative(self, t: float) -> float:
        if t > TOY_JUNCTION:
            return self.right[0]
        if t < -TOY_JUNCTION:
            return self.left[0]
        return float(P.polyval(t, self._slope_coef))


def toy_pieces(variant: ToyVariant = "continuous") -> List[PiecewiseCubic]:
    # left intercepts of f1 and f3 differ between the printed text and the continuous extension
    f1_left = -25040.0 if variant == "printed" else -24400.0
    f3_left = -1984.0 if variant == "printed" else 1984.0
    return [
        # (x^3 - 16x)(x + 2)
        PiecewiseCubic(Polynomial([0.0, -32.0, -16.0, 2.0, 1.0]), (4248.0, -32400.0), (-3112.0, f1_left)),
        # (0.5x^3 + x^2)(x - 4)
        PiecewiseCubic(Polynomial([0.0, 0.0, -4.0, -1.0, 0.5]), (1620.0, -12600.0), (-2220.0, -16600.0)),
        # (x + 2)^2 (x - 4)
        PiecewiseCubic(Polynomial([-16.0, -12.0, 0.0, 1.0]), (288.0, -2016.0), (288.0, f3_left)),
    ]


def _scalar_objective(piece: PiecewiseCubic, lipschitz: float, bound: float, name: str) -> SmoothObjective:
    def value(u: np.ndarray) -> float:
        return piece.value(float(u[0]))

    def gradient(u: np.ndarray) -> np.ndarray:
        return np.array([piece.derivative(float(u[0]))])

    return SmoothObjective(dimension=1, value=value, gradient=gradient, lipschitz=lipschitz, gradient_bound=bound, name=name)


def paper_toy_problem(variant: ToyVariant = "continuous") -> StackedObjective:
    """Three scalar agents whose sum has a global minimizer near 2.62 and a local one near -2.49."""
    if variant not in ("continuous", "printed"):
        raise ObjectiveError(f"unknown toy variant '{variant}'")
    pieces = toy_pieces(variant)
    if variant == "printed":
        for gap in junction_report(variant):
            if gap.value_gap != 0.0:
                log.warning(f"Printed toy f{gap.agent + 1} is discontinuous at x={gap.point:+.0f}: value gap {gap.value_gap:.6g}")
    agents = tuple(
        _scalar_objective(piece, TOY_LIPSCHITZ[i], TOY_GRADIENT_BOUNDS[i], f"toy_f{i + 1}")
        for i, piece in enumerate(pieces)
    )
    return StackedObjective(agents, kernel=PolynomialCoreKernel.from_pieces(pieces))


@dataclass(frozen=True)
class JunctionGap:
    agent: int
    point: float
    value_gap: float
    slope_gap: float


def junction_report(variant: ToyVariant = "continuous") -> List[JunctionGap]:
    gaps = []
    for i, piece in enumerate(toy_pieces(variant)):
        for point, (slope, intercept) in ((TOY_JUNCTION, piece.right), (-TOY_JUNCTION, piece.left)):
            core_value = float(piece.core(point))
            core_slope = float(piece.core.deriv()(point))
            gaps.append(JunctionGap(i, point, slope * point + intercept - core_value, slope - core_slope))
    return gaps


def toy_stationary_points() -> np.ndarray:
    """Real stationary points of the summed toy objective (all lie on the polynomial core)."""
    total = sum((p.core for p in toy_pieces()), Polynomial([0.0]))
    roots = total.deriv().roots()
    real = np.sort(roots[np.abs(roots.imag) < 1e-12].real)
    return real[np.abs(real) <= TOY_JUNCTION]


# --- Quadratics ---

def quadratic(center: Sequence[float] | np.ndarray, curvature: float = 1.0) -> SmoothObjective:
    c = np.asarray(center, dtype=float).reshape(-1)

    def value(u: np.ndarray) -> float:
        d = u - c
        return 0.5 * curvature * float(np.dot(d, d))

    def gradient(u: np.ndarray) -> np.ndarray:
        return curvature * (u - c)

    return SmoothObjective(dimension=c.size, value=value, gradient=gradient, lipschitz=curvature, convex=True, name="quadratic")


def zero_objective(dimension: int, lipschitz: float = 1.0) -> SmoothObjective:
    # any positive constant is a valid Lipschitz constant for the zero map
    return SmoothObjective(
        dimension=dimension,
        value=lambda u: 0.0,
        gradient=lambda u: np.zeros(dimension),
        lipschitz=lipschitz,
        gradient_bound=0.0,
        convex=True,
        name="zero",
    )


@dataclass(frozen=True, eq=False)
class QuadraticKernel:
    centers: np.ndarray  # (n, p)
    curvature: float

    def values(self, x: np.ndarray) -> np.ndarray:
        d = x - self.centers
        return 0.5 * self.curvature * np.sum(d * d, axis=-1)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.curvature * (x - self.centers)


def stacked_quadratic(centers: np.ndarray, curvature: float = 1.0) -> StackedObjective:
    """One quadratic per row of centers, evaluated together."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    agents = tuple(quadratic(c, curvature) for c in centers)
    return StackedObjective(agents, kernel=QuadraticKernel(centers.copy(), float(curvature)))


# --- Decentralized Least Squares ---

@dataclass(frozen=True, eq=False)
class LeastSquaresKernel:
    matrices: np.ndarray  # (n, m, p)
    targets: np.ndarray  # (n, m)

    def values(self, x: np.ndarray) -> np.ndarray:
        flat = x.reshape((-1,) + x.shape[-2:])
        # (n, batch, m): one GEMM per agent
        r = np.matmul(flat.transpose(1, 0, 2), self.matrices.transpose(0, 2, 1)) - self.targets[:, None, :]
        return 0.5 * np.sum(r * r, axis=-1).T.reshape(x.shape[:-1])

    def gradient(self, x: np.ndarray) -> np.ndarray:
        r = np.matmul(self.matrices, x[..., None])[..., 0] - self.targets
        return np.matmul(self.matrices.transpose(0, 2, 1), r[..., None])[..., 0]


@dataclass(frozen=True)
class LeastSquaresData:
    matrices: Tuple[np.ndarray, ...]
    targets: Tuple[np.ndarray, ...]
    ground_truth: np.ndarray
    seed: int
    noise_std: float


def _least_squares_agent(b_mat: np.ndarray, target: np.ndarray, name: str) -> SmoothObjective:
    lipschitz = float(np.linalg.norm(b_mat, 2) ** 2)

    def value(u: np.ndarray) -> float:
        r = b_mat @ u - target
        return 0.5 * float(np.dot(r, r))

    def gradient(u: np.ndarray) -> np.ndarray:
        return b_mat.T @ (b_mat @ u - target)

    return SmoothObjective(
        dimension=b_mat.shape[1],
        value=value,
        gradient=gradient,
        lipschitz=max(lipschitz, np.finfo(float).tiny),
        convex=True,
        name=name,
    )


def decentralized_least_squares(
    seed: int, n: int, p: int, m: int, sparsity: int, noise_std: float = 0.0
) -> Tuple[StackedObjective, np.ndarray, LeastSquaresData]:
    if n < 1 or p < 1 or m < 1:
        raise ObjectiveError(f"n, p and m must be positive, got n={n}, p={p}, m={m}")
    if not 0 <= sparsity <= p:
        raise ObjectiveError(f"sparsity must lie in [0, {p}], got {sparsity}")
    if noise_std < 0:
        raise ObjectiveError(f"noise_std must be nonnegative, got {noise_std}")

    rng = np.random.default_rng(seed)
    truth = np.zeros(p)
    support = np.sort(rng.choice(p, size=sparsity, replace=False))
    truth[support] = rng.standard_normal(sparsity)

    matrices, targets = [], []
    for _ in range(n):
        b_mat = rng.standard_normal((m, p))
        noise = rng.standard_normal(m)
        matrices.append(b_mat)
        targets.append(b_mat @ truth + noise_std * noise)

    agents = tuple(_least_squares_agent(b, t, f"lsq_{i}") for i, (b, t) in enumerate(zip(matrices, targets)))
    data = LeastSquaresData(tuple(matrices), tuple(targets), truth, seed, noise_std)
    log.info(f"Generated least-squares instance: n={n}, p={p}, m={m}, sparsity={sparsity}, noise_std={noise_std}, seed={seed}")
    kernel = LeastSquaresKernel(np.stack(matrices), np.stack(targets))
    return StackedObjective(agents, kernel=kernel), truth, data


def least_squares_optimum(data: LeastSquaresData) -> Tuple[np.ndarray, float]:
    """Minimizer and optimal value of the aggregated problem, from the stacked normal equations."""
    a = np.vstack(data.matrices)
    y = np.concatenate(data.targets)
    u, *_ = lstsq(a, y)
    f_opt = sum(0.5 * float(np.sum((b @ u - t) ** 2)) for b, t in zip(data.matrices, data.targets))
    return u, f_opt


# --- Sampled Checks ---

def gradient_check(objective: SmoothObjective, rng: np.random.Generator, samples: int = 100, box: float = 20.0) -> float:
    """Worst relative error between the analytic gradient and central differences."""
    worst = 0.0
    for _ in range(samples):
        u = rng.uniform(-box, box, size=objective.dimension)
        g = objective.gradient(u)
        fd = np.empty_like(g)
        for j in range(objective.dimension):
            h = 1e-6 * (1.0 + abs(u[j]))
            e = np.zeros_like(u)
            e[j] = h
            fd[j] = (objective.value(u + e) - objective.value(u - e)) / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g))))
    return worst


def lipschitz_check(objective: SmoothObjective, rng: np.random.Generator, samples: int = 100, box: float = 20.0) -> float:
    """Largest sampled ratio ||grad(u) - grad(v)|| / ||u - v||, divided by the declared constant."""
    worst = 0.0
    for _ in range(samples):
        u = rng.uniform(-box, box, size=objective.dimension)
        v = rng.uniform(-box, box, size=objective.dimension)
        dist = float(np.linalg.norm(u - v))
        if dist == 0.0:
            continue
        ratio = float(np.linalg.norm(objective.gradient(u) - objective.gradient(v))) / dist
        worst = max(worst, ratio / objective.lipschitz)
    return worst
