# file: app/services/preset_service.py
import logging
from typing import Callable, Dict, List, Optional, Tuple

from app.core.errors import ConfigError
from app.schemas.models import PresetInfo, RunConfig

log = logging.getLogger("dgdlab.services.preset")

# symmetric doubly stochastic matrix of the three-agent toy experiment, spectrum {1, 0.5, -0.5}
TOY_MIXING = [[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.5, 0.5, 0.0]]
TOY_FIXED_ALPHA = 3e-4
TOY_ITERATIONS = 200_000
L0_ITERATIONS = 10_000


def _toy(name: str, description: str, step: dict, x0: dict) -> RunConfig:
    return RunConfig.model_validate(
        {
            "name": name,
            "description": description,
            "problem": {"objective": "paper_toy"},
            "network": {"matrix": TOY_MIXING},
            "step": step,
            "x0": x0,
            "iterations": TOY_ITERATIONS,
        }
    )


def _l0(name: str, description: str, step: dict) -> RunConfig:
    return RunConfig.model_validate(
        {
            "name": name,
            "description": description,
            "problem": {
                "objective": "least_squares",
                "seed": 0,
                "agents": 10,
                "dimension": 256,
                "rows_per_agent": 150,
                "sparsity": 10,
                "noise_std": 0.1,
            },
            "reg": {"kind": "l0", "lambda": 0.5},
            # ring plus chords (0,5), (2,7); lazy weights keep lambda_n > 0 for the nonconvex prox
            "network": {"topology": "ring_with_chords", "nodes": 10, "lazy": True},
            "step": step,
            "iterations": L0_ITERATIONS,
        }
    )


DANGEROUS_START = {"kind": "rows", "rows": [[-1.0], [-1.2], [-1.1]]}


def _decreasing(epsilon: float) -> dict:
    return {"kind": "decreasing", "epsilon": epsilon, "numerator": 1.0}


PRESETS: Dict[str, Tuple[str, Callable[[], RunConfig]]] = {
    "paper_toy_fixed": (
        "Three-agent piecewise-cubic problem, x0 = 0, fixed alpha = 3e-4; agents reach the global minimizer near 2.62.",
        lambda: _toy(
            "paper_toy_fixed",
            "Toy problem from the zero start with a safe fixed step.",
            {"kind": "fixed", "alpha": TOY_FIXED_ALPHA},
            {"kind": "zeros"},
        ),
    ),
    "paper_toy_dangerous": (
        "Toy problem started at (-1, -1.2, -1.1), between the local minimizer and the local maximizer.",
        lambda: _toy(
            "paper_toy_dangerous",
            "Toy problem from the dangerous start; the limit is recorded, not required to be global.",
            {"kind": "fixed", "alpha": TOY_FIXED_ALPHA},
            DANGEROUS_START,
        ),
    ),
    "paper_toy_decreasing": (
        "Toy problem from x0 = 0 with alpha_k = 1 / (L_f sqrt(k + 1)).",
        lambda: _toy("paper_toy_decreasing", "Toy problem with a decreasing step, epsilon = 1/2.", _decreasing(0.5), {"kind": "zeros"}),
    ),
    "paper_toy_decreasing_eps1": (
        "Toy problem from x0 = 0 with alpha_k = 1 / (L_f (k + 1)).",
        lambda: _toy("paper_toy_decreasing_eps1", "Toy problem with a decreasing step, epsilon = 1.", _decreasing(1.0), {"kind": "zeros"}),
    ),
    "paper_toy_dangerous_decreasing": (
        "Toy problem from the dangerous start with alpha_k = 1 / (L_f sqrt(k + 1)).",
        lambda: _toy(
            "paper_toy_dangerous_decreasing",
            "Dangerous start, decreasing step with epsilon = 1/2.",
            _decreasing(0.5),
            DANGEROUS_START,
        ),
    ),
    "paper_toy_dangerous_decreasing_eps1": (
        "Toy problem from the dangerous start with alpha_k = 1 / (L_f (k + 1)).",
        lambda: _toy(
            "paper_toy_dangerous_decreasing_eps1",
            "Dangerous start, decreasing step with epsilon = 1.",
            _decreasing(1.0),
            DANGEROUS_START,
        ),
    ),
    "paper_l0": (
        "Sparse least squares, n=10, p=256, m=150, l0 with lambda=0.5, fixed step at half the safe bound.",
        lambda: _l0(
            "paper_l0",
            "Prox-DGD with hard thresholding; consensus error settles on a plateau.",
            {"kind": "fixed", "safe_fraction": 0.5},
        ),
    ),
    "paper_l0_small_step": (
        "Same sparse least-squares instance, fixed step at a quarter of the safe bound.",
        lambda: _l0(
            "paper_l0_small_step",
            "Prox-DGD with hard thresholding; a smaller step gives a lower plateau.",
            {"kind": "fixed", "safe_fraction": 0.25},
        ),
    ),
    "paper_l0_large_step": (
        "Same sparse least-squares instance, fixed step at 0.9 of the safe bound.",
        lambda: _l0(
            "paper_l0_large_step",
            "Prox-DGD with hard thresholding; a larger step gives a higher plateau.",
            {"kind": "fixed", "safe_fraction": 0.9},
        ),
    ),
    "paper_l0_decreasing": (
        "Same sparse least-squares instance with alpha_k = 1 / (L_f sqrt(k + 1)).",
        lambda: _l0(
            "paper_l0_decreasing",
            "Prox-DGD with hard thresholding; consensus error keeps decaying.",
            _decreasing(0.5),
        ),
    ),
    "paper_l0_decreasing_eps1": (
        "Same sparse least-squares instance with alpha_k = 1 / (L_f (k + 1)).",
        lambda: _l0(
            "paper_l0_decreasing_eps1",
            "Prox-DGD with hard thresholding; faster-shrinking steps, faster consensus decay.",
            _decreasing(1.0),
        ),
    ),
}


def list_presets() -> List[PresetInfo]:
    return [PresetInfo(name=name, description=PRESETS[name][0]) for name in sorted(PRESETS)]


def get_preset(name: str, iterations: Optional[int] = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(sorted(PRESETS))}")
    config = PRESETS[name][1]()
    if iterations is not None:
        if iterations < 0:
            raise ConfigError(f"iterations must be nonnegative, got {iterations}")
        config = config.model_copy(update={"iterations": iterations})
        log.info(f"Preset '{name}' overridden to K={iterations}")
    return config
