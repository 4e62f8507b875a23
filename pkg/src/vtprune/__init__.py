"""vtprune: training-free vision-token pruning.

Scores tokens by zeroth-order finite-difference sensitivity through a small
projection MLP and selects a budget-constrained subset with a
sensitivity-aware diversity greedy.
"""

from .analysis import (
    CorrelationConfig,
    FlopsModel,
    TimingSummary,
    llm_prefill_flops,
    projector_pass_flops,
    selection_overlap,
    sensitivity_overhead_flops,
    spearman,
    time_pipeline,
)
from .errors import (
    ContractViolationError,
    InputFormatError,
    InsufficientDataError,
    VtpruneError,
)
from .numerics import (
    DirectionSet,
    TokenMatrix,
    cosine_similarity,
    minmax_normalize,
    sample_directions,
)
from .projector import AffineLayer, Projector
from .selection import (
    SelectionConfig,
    SelectionResult,
    diversity_score,
    select,
    select_per_patch,
)
from .sensitivity import (
    ConvergenceTable,
    SensitivityConfig,
    SensitivityReport,
    estimate_sensitivity,
    verify_convergence,
)
from .tensorio import (
    load_projector,
    load_tokens,
    read_safetensors,
    save_projector,
    save_tokens,
    write_safetensors,
)

__version__ = "0.1.0"

__all__ = [
    "AffineLayer",
    "ContractViolationError",
    "ConvergenceTable",
    "CorrelationConfig",
    "DirectionSet",
    "FlopsModel",
    "InputFormatError",
    "InsufficientDataError",
    "Projector",
    "SelectionConfig",
    "SelectionResult",
    "SensitivityConfig",
    "SensitivityReport",
    "TimingSummary",
    "TokenMatrix",
    "VtpruneError",
    "cosine_similarity",
    "diversity_score",
    "estimate_sensitivity",
    "llm_prefill_flops",
    "load_projector",
    "load_tokens",
    "minmax_normalize",
    "projector_pass_flops",
    "read_safetensors",
    "sample_directions",
    "save_projector",
    "save_tokens",
    "select",
    "select_per_patch",
    "selection_overlap",
    "sensitivity_overhead_flops",
    "spearman",
    "time_pipeline",
    "verify_convergence",
    "write_safetensors",
    "__version__",
]
