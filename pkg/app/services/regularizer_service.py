# file: app/services/regularizer_service.py
"""
Proximable regularizers and their proximal maps.

prox(v, alpha) = argmin_u  alpha * r(u) + 1/2 ||u - v||^2

Separable kinds are solved componentwise. The nonconvex scalar problems
(l0, lq, SCAD, MCP) are solved by comparing every candidate minimizer,
so the result is a global minimizer with ties broken toward the candidate
of smaller magnitude.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from app.core.errors import DimensionMismatchError, RegularizerError

log = logging.getLogger("dgdlab.services.regularizer")

RegularizerKind = Literal["zero", "l1", "l0", "lq", "scad", "mcp", "box", "ball"]

# --- Defaults & Tolerances ---
SCAD_DEFAULT_A = 3.7
MCP_DEFAULT_GAMMA = 2.0
BALL_FEASIBILITY_RTOL = 1e-12
ROOT_IMAG_TOL = 1e-9

CONVEX_KINDS = frozenset({"zero", "l1", "box", "ball"})


@dataclass(frozen=True)
class Regularizer:
    kind: RegularizerKind
    lam: float = 0.0
    q: float = 0.0
    a: float = SCAD_DEFAULT_A
    gamma: float = MCP_DEFAULT_GAMMA
    lo: float = -math.inf
    hi: float = math.inf
    radius: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "l1", "l0", "lq", "scad", "mcp", "box", "ball"):
            raise RegularizerError(f"unknown regularizer kind '{self.kind}'")
        if self.lam < 0:
            raise RegularizerError(f"{self.kind}: lambda must be nonnegative, got {self.lam}")
        if self.kind == "lq" and not 0.0 <= self.q < 1.0:
            raise RegularizerError(f"lq: q must lie in [0, 1), got {self.q}")
        if self.kind == "scad" and not self.a > 2.0:
            raise RegularizerError(f"scad: a must exceed 2, got {self.a}")
        if self.kind == "mcp" and not self.gamma > 1.0:
            raise RegularizerError(f"mcp: gamma must exceed 1, got {self.gamma}")
        if self.kind == "box" and not self.lo <= self.hi:
            raise RegularizerError(f"box: lo={self.lo} exceeds hi={self.hi}")
        if self.kind == "ball" and not self.radius > 0:
            raise RegularizerError(f"ball: radius must be positive, got {self.radius}")

    @property
    def convex(self) -> bool:
        return self.kind in CONVEX_KINDS

    @property
    def separable(self) -> bool:
        return self.kind != "ball"

    def subgradient_bound(self, dimension: int) -> Optional[float]:
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.lam * math.sqrt(dimension)
        return None

    # --- Values ---

    def penalty(self, v: np.ndarray) -> np.ndarray:
        """Componentwise penalty; for the ball this is the one-dimensional ball."""
        v = np.asarray(v, dtype=float)
        t = np.abs(v)
        if self.kind == "zero":
            return np.zeros_like(t)
        if self.kind == "l1":
            return self.lam * t
        if self.kind == "l0" or (self.kind == "lq" and self.q == 0.0):
            return self.lam * (t != 0.0)
        if self.kind == "lq":
            return self.lam * t ** self.q
        if self.kind == "scad":
            lam, a = self.lam, self.a
            middle = (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0))
            return np.where(t <= lam, lam * t, np.where(t <= a * lam, middle, 0.5 * lam * lam * (a + 1.0)))
        if self.kind == "mcp":
            lam, gamma = self.lam, self.gamma
            return np.where(t <= gamma * lam, lam * t - t * t / (2.0 * gamma), 0.5 * gamma * lam * lam)
        if self.kind == "box":
            return np.where((v >= self.lo) & (v <= self.hi), 0.0, math.inf)
        return np.where(t <= self.radius * (1.0 + BALL_FEASIBILITY_RTOL), 0.0, math.inf)

    def value(self, v: np.ndarray) -> float:
        return float(self.batch_value(np.atleast_1d(v)))

    def batch_value(self, v: np.ndarray) -> np.ndarray:
        """r over the last axis; leading axes are kept."""
        v = np.asarray(v, dtype=float)
        if not self.separable:
            norms = np.linalg.norm(v, axis=-1)
            return np.where(norms <= self.radius * (1.0 + BALL_FEASIBILITY_RTOL), 0.0, math.inf)
        return np.sum(self.penalty(v), axis=-1)

    # --- Proximal Map ---

    def prox(self, v: np.ndarray, alpha: float) -> np.ndarray:
        if not alpha > 0:
            raise RegularizerError(f"prox scale alpha must be positive, got {alpha}")
        v = np.asarray(v, dtype=float)
        if self.kind == "zero":
            return v.copy()
        if self.kind == "l1":
            return np.sign(v) * np.maximum(np.abs(v) - alpha * self.lam, 0.0)
        if self.kind == "l0" or (self.kind == "lq" and self.q == 0.0):
            # tie at the threshold resolves to zero
            return np.where(np.abs(v) > math.sqrt(2.0 * alpha * self.lam), v, 0.0)
        if self.kind == "lq":
            return np.sign(v) * self._lq_magnitude(np.abs(v), alpha)
        if self.kind == "scad":
            return np.sign(v) * self._best_candidate(np.abs(v), alpha, self._scad_candidates(np.abs(v), alpha))
        if self.kind == "mcp":
            return np.sign(v) * self._best_candidate(np.abs(v), alpha, self._mcp_candidates(np.abs(v), alpha))
        if self.kind == "box":
            return np.clip(v, self.lo, self.hi)
        norm = float(np.linalg.norm(v))
        return v.copy() if norm <= self.radius else v * (self.radius / norm)

    def lq_lower_bound(self, alpha: float) -> float:
        """Smallest nonzero magnitude the lq prox can return at scale alpha."""
        q = 0.0 if self.kind == "l0" else self.q
        return (2.0 * alpha * self.lam * (1.0 - q)) ** (1.0 / (2.0 - q))

    def _scalar_objective(self, u: np.ndarray, t: np.ndarray, alpha: float) -> np.ndarray:
        return 0.5 * (u - t) ** 2 + alpha * self.penalty(u)

    def _best_candidate(self, t: np.ndarray, alpha: float, candidates: np.ndarray) -> np.ndarray:
        # candidates are ordered by nondecreasing magnitude so argmin breaks ties toward zero
        scores = self._scalar_objective(candidates, t[None, ...], alpha)
        pick = np.argmin(scores, axis=0)
        return np.take_along_axis(candidates, pick[None, ...], axis=0)[0]

    def _scad_candidates(self, t: np.ndarray, alpha: float) -> np.ndarray:
        lam, a = self.lam, self.a
        zero = np.zeros_like(t)
        first = np.clip(t - alpha * lam, 0.0, lam)
        if a - 1.0 - alpha > 0:
            middle = np.clip(((a - 1.0) * t - alpha * a * lam) / (a - 1.0 - alpha), lam, a * lam)
        else:
            # concave middle piece: its minimum sits on an endpoint
            middle = np.full_like(t, lam)
        return np.stack([zero, first, np.full_like(t, lam), middle, np.full_like(t, a * lam), np.maximum(t, a * lam)])

    def _mcp_candidates(self, t: np.ndarray, alpha: float) -> np.ndarray:
        lam, gamma = self.lam, self.gamma
        zero = np.zeros_like(t)
        if gamma - alpha > 0:
            inner = np.clip((t - alpha * lam) / (1.0 - alpha / gamma), 0.0, gamma * lam)
        else:
            inner = zero
        return np.stack([zero, inner, np.full_like(t, gamma * lam), np.maximum(t, gamma * lam)])

    def _lq_magnitude(self, t: np.ndarray, alpha: float) -> np.ndarray:
        out = np.zeros_like(t)
        active = t > 0.0
        if not np.any(active) or self.lam == 0.0:
            return np.where(active, t, 0.0)
        ta = t[active]
        if self.q in (0.5, 2.0 / 3.0):
            u = self._lq_closed_form(ta, alpha)
        else:
            u = np.array([self._lq_root(float(ti), alpha) for ti in ta])
        keep = self._scalar_objective(u, ta, alpha) < 0.5 * ta * ta
        out[active] = np.where(keep & (u > 0.0), u, 0.0)
        return out

    def _lq_closed_form(self, t: np.ndarray, alpha: float) -> np.ndarray:
        """
        Stationary points of 1/2 (u - t)^2 + alpha*lam*u^q for q in {1/2, 2/3}.

        Substituting u = s^2 (q = 1/2) or u = s^3 (q = 2/3) turns the
        first-order condition into a polynomial in s:
            q = 1/2:  s^3 - t s + alpha*lam/2 = 0,        u = s^2
            q = 2/3:  s^4 - t s + 2*alpha*lam/3 = 0,      u = s^3
        Its largest positive root is the local minimizer on (0, t]. Roots are
        the eigenvalues of the batched companion matrices.
        """
        degree, power = (3, 2.0) if self.q == 0.5 else (4, 3.0)
        const = alpha * self.lam * self.q
        m = t.size
        companion = np.zeros((m, degree, degree))
        companion[:, 1:, :-1] = np.eye(degree - 1)
        companion[:, 0, -1] = -const  # -c_0
        companion[:, 1, -1] = t  # -c_1, with c_1 = -t
        roots = np.linalg.eigvals(companion)
        real = np.where(np.abs(roots.imag) <= ROOT_IMAG_TOL * (1.0 + np.abs(roots.real)), roots.real, -np.inf)
        s = np.max(real, axis=1)
        u = np.where(s > 0.0, np.maximum(s, 0.0) ** power, 0.0)
        return np.minimum(u, t)

    def _lq_root(self, t: float, alpha: float) -> float:
        q = self.q
        c = alpha * self.lam * q

        def slope(u: float) -> float:
            return u - t + c * u ** (q - 1.0)

        inflection = (c * (1.0 - q)) ** (1.0 / (2.0 - q))
        if inflection >= t or slope(inflection) >= 0.0:
            return 0.0
        return brentq(slope, inflection, t, xtol=1e-15, rtol=4 * np.finfo(float).eps)


# --- Constructors ---

def zero() -> Regularizer:
    return Regularizer("zero")


def l1(lam: float) -> Regularizer:
    return Regularizer("l1", lam=lam)


def l0(lam: float) -> Regularizer:
    return Regularizer("l0", lam=lam)


def lq(lam: float, q: float) -> Regularizer:
    return Regularizer("lq", lam=lam, q=q)


def scad(lam: float, a: float = SCAD_DEFAULT_A) -> Regularizer:
    return Regularizer("scad", lam=lam, a=a)


def mcp(lam: float, gamma: float = MCP_DEFAULT_GAMMA) -> Regularizer:
    return Regularizer("mcp", lam=lam, gamma=gamma)


def box_indicator(lo: float, hi: float) -> Regularizer:
    return Regularizer("box", lo=lo, hi=hi)


def ball_indicator(radius: float) -> Regularizer:
    return Regularizer("ball", radius=radius)


# --- Stacked Operations ---

def _check_rows(regs: Sequence[Regularizer], x: np.ndarray) -> None:
    if x.ndim < 2 or len(regs) != x.shape[-2]:
        raise DimensionMismatchError(f"{len(regs)} regularizers for an iterate of shape {x.shape}")


def _shared(regs: Sequence[Regularizer]) -> Optional[Regularizer]:
    """The common regularizer when every agent uses the same one."""
    first = regs[0]
    return first if all(r == first for r in regs[1:]) else None


def stacked_prox(regs: Sequence[Regularizer], x: np.ndarray, alpha: float) -> np.ndarray:
    _check_rows(regs, x)
    shared = _shared(regs)
    if shared is not None and shared.separable:
        return shared.prox(x, alpha)
    out = np.empty_like(x, dtype=float)
    for i, reg in enumerate(regs):
        out[i] = reg.prox(x[i], alpha)
    return out


def stacked_value(regs: Sequence[Regularizer], x: np.ndarray) -> float | np.ndarray:
    """sum_i r_i(x_i); x may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    _check_rows(regs, x)
    shared = _shared(regs)
    if shared is not None:
        totals = shared.batch_value(x).sum(axis=-1)
    else:
        totals = sum(reg.batch_value(x[..., i, :]) for i, reg in enumerate(regs))
    return float(totals) if np.ndim(totals) == 0 else totals


# --- Oracles ---

def prox_objective(reg: Regularizer, u: np.ndarray, v: np.ndarray, alpha: float) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return alpha * reg.value(u) + 0.5 * float(np.sum((u - v) ** 2))


def scalar_prox_oracle(reg: Regularizer, v: float, alpha: float, spacing: float = 1e-4) -> Tuple[float, float]:
    """Brute-force scalar prox: best point of a fine grid around v, plus the candidates 0 and v."""
    width = 3.0 * math.sqrt(2.0 * alpha * (1.0 + abs(v)))
    grid = np.concatenate([np.arange(v - width, v + width + 0.5 * spacing, spacing), [0.0, v]])
    scores = alpha * reg.penalty(grid) + 0.5 * (grid - v) ** 2
    best = int(np.argmin(scores))
    return float(grid[best]), float(scores[best])
