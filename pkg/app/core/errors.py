# file: app/core/errors.py
from typing import List, Optional, Sequence

import numpy as np


class DgdLabError(Exception):
    """Base class for every domain error raised by the toolkit."""


class GraphError(DgdLabError, ValueError):
    def __init__(self, message: str, components: Optional[Sequence[Sequence[int]]] = None):
        super().__init__(message)
        self.components: List[List[int]] = [list(c) for c in (components or [])]


class MixingMatrixError(DgdLabError, ValueError):
    """Raised when a matrix violates one or more mixing-matrix clauses."""

    def __init__(self, clauses: Sequence[str], details: Sequence[str]):
        self.clauses = list(clauses)
        self.details = list(details)
        super().__init__("mixing matrix rejected: " + "; ".join(self.details))


class DimensionMismatchError(DgdLabError, ValueError):
    pass


class ScheduleError(DgdLabError, ValueError):
    pass


class RegularizerError(DgdLabError, ValueError):
    pass


class ConfigError(DgdLabError, ValueError):
    pass


class NonFiniteIterateError(DgdLabError, ArithmeticError):
    """An iterate left the finite reals; carries the last finite state."""

    def __init__(self, last_finite: np.ndarray, k: Optional[int] = None):
        where = f" at k={k}" if k is not None else ""
        super().__init__(f"nonfinite iterate produced{where}")
        self.k = k
        self.last_finite = last_finite


class ObjectiveError(DgdLabError, ValueError):
    pass
