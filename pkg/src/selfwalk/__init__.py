"""Locally self-interacting walks on Z: simulation, phase analysis and exact checks."""

__version__ = "0.1.0"

from .kernel import (  # noqa: E402
    InteractionKernel,
    KernelError,
    classify,
    is_positive_definite,
    new_general,
    new_symmetric,
    parse_literal,
    predict_stuck_size,
)
from .engine import RunConfig, RunSummary, preset, run  # noqa: E402
from .analysis import classify_phase, scaling_exponent  # noqa: E402

__all__ = [
    "InteractionKernel", "KernelError", "RunConfig", "RunSummary", "classify",
    "classify_phase", "is_positive_definite", "new_general", "new_symmetric",
    "parse_literal", "predict_stuck_size", "preset", "run", "scaling_exponent",
]
