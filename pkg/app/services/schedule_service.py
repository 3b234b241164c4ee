# file: app/services/schedule_service.py
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from app.core.errors import ScheduleError

log = logging.getLogger("dgdlab.services.schedule")

ScheduleKind = Literal["fixed", "decreasing"]


@dataclass(frozen=True)
class StepSchedule:
    kind: ScheduleKind
    alpha: float = 0.0
    epsilon: float = 1.0
    numerator: float = 1.0
    lipschitz: float = 1.0
    bound: Optional[float] = None

    @property
    def regime(self) -> str:
        if self.kind == "decreasing":
            return "decreasing"
        if self.bound is not None and self.alpha < self.bound:
            return "safe"
        return "unsafe"

    def at(self, k: int) -> float:
        if self.kind == "fixed":
            return self.alpha
        return self.numerator / (self.lipschitz * (k + 1) ** self.epsilon)

    def sequence(self, K: int) -> np.ndarray:
        """alpha_0, ..., alpha_K."""
        if self.kind == "fixed":
            return np.full(K + 1, self.alpha)
        k = np.arange(K + 1, dtype=float)
        return self.numerator / (self.lipschitz * (k + 1.0) ** self.epsilon)

    def partial_sum(self, K: int) -> float:
        return float(np.sum(self.sequence(K)))

    def sum_bounds(self, K: int) -> Tuple[float, float]:
        """
        Integral bounds on sum_{k<=K} alpha_k for a decreasing schedule, from
            int_1^{K+2} x^-eps dx  <=  sum_{j=1}^{K+1} j^-eps  <=  1 + int_1^{K+1} x^-eps dx.
        """
        if self.kind != "decreasing":
            total = (K + 1) * self.alpha
            return total, total
        eps = self.epsilon
        if eps == 1.0:
            lower, upper = math.log(K + 2), 1.0 + math.log(K + 1)
        else:
            lower = ((K + 2) ** (1 - eps) - 1) / (1 - eps)
            upper = 1.0 + ((K + 1) ** (1 - eps) - 1) / (1 - eps)
        scale = self.numerator / self.lipschitz
        return scale * lower, scale * upper

    def inverse_difference_bound(self, k: int) -> float:
        """Upper bound on 1/alpha_{k+1} - 1/alpha_k for a decreasing schedule."""
        if self.kind == "fixed":
            return 0.0
        return 2.0 * self.epsilon * self.lipschitz / self.numerator * (k + 1) ** (self.epsilon - 1.0)


def make_fixed(alpha: float, bound: Optional[float] = None) -> StepSchedule:
    if not alpha > 0:
        raise ScheduleError(f"fixed step must be positive, got {alpha}")
    schedule = StepSchedule(kind="fixed", alpha=float(alpha), bound=bound)
    if schedule.regime == "unsafe":
        log.warning(f"Fixed step alpha={alpha:.6g} is not below the safe bound {bound}; running outside the descent regime.")
    return schedule


def make_fixed_fraction(fraction: float, bound: float) -> StepSchedule:
    """Fixed step chosen as a fraction of the safe bound."""
    if not fraction > 0:
        raise ScheduleError(f"safe_fraction must be positive, got {fraction}")
    return make_fixed(fraction * bound, bound)


def make_decreasing(epsilon: float, lipschitz: float, numerator: float = 1.0) -> StepSchedule:
    if not 0.0 < epsilon <= 1.0:
        raise ScheduleError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not lipschitz > 0:
        raise ScheduleError(f"Lipschitz constant must be positive, got {lipschitz}")
    if not numerator > 0:
        raise ScheduleError(f"numerator must be positive, got {numerator}")
    return StepSchedule(kind="decreasing", epsilon=float(epsilon), numerator=float(numerator), lipschitz=float(lipschitz))
