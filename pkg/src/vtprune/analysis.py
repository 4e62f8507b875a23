"""Rank-correlation protocol, analytic FLOPs accounting, selection-overlap
metrics, and the wall-clock timing harness.

FLOPs functions use exact integer arithmetic under a configurable
MAC-counting convention (1 multiply-accumulate = 1 or 2 FLOPs); headline
comparisons should be made on ratios between token budgets, not absolute
totals, since published totals rarely state their convention.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractViolationError, InputFormatError, InsufficientDataError
from .numerics import TokenMatrix, minmax_normalize
from .projector import Projector
from .selection import SelectionConfig, SelectionResult, select, select_per_patch
from .sensitivity import SensitivityConfig, estimate_sensitivity


@dataclass(frozen=True)
class CorrelationConfig:
    threshold: float = 0.5  # drop pairs whose normalized reference is below this
    tie_method: str = "average_rank"

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ContractViolationError("threshold must be finite")
        if self.tie_method != "average_rank":
            raise ContractViolationError(
                f"unsupported tie_method {self.tie_method!r}"
            )


def spearman(a, b, config: CorrelationConfig = CorrelationConfig()) -> float:
    """Spearman rank correlation with reference-side low-value filtering.

    Filtering keeps indices where min-max-normalized ``a`` is at or above
    the threshold; threshold 0 disables it. Ranks use average tie
    handling; the coefficient is the Pearson correlation of the ranks.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ContractViolationError(f"length mismatch: {a.size} vs {b.size}")
    if config.threshold > 0.0 and a.size:
        keep = minmax_normalize(a) >= config.threshold
        a, b = a[keep], b[keep]
    if a.size < 2:
        raise InsufficientDataError(
            f"insufficient data: {a.size} pairs survive the threshold filter"
        )
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(np.dot(ra, ra)) * float(np.dot(rb, rb)))
    if denom == 0.0:
        raise InsufficientDataError("insufficient data: zero rank variance")
    return float(min(1.0, max(-1.0, float(np.dot(ra, rb)) / denom)))


@dataclass(frozen=True)
class FlopsModel:
    """Shape parameters for analytic FLOPs of projector passes and prefill."""

    llm_layers: int
    llm_hidden: int
    llm_ffn: int
    proj_dims: tuple[tuple[int, int], ...]
    mac_flops: int = 2

    def __post_init__(self):
        dims = tuple((int(i), int(o)) for i, o in self.proj_dims)
        object.__setattr__(self, "proj_dims", dims)
        if self.llm_layers < 1 or self.llm_hidden < 1 or self.llm_ffn < 1:
            raise ContractViolationError("LLM dimensions must be positive")
        if any(i < 1 or o < 1 for i, o in dims):
            raise ContractViolationError("projector dims must be positive")
        if self.mac_flops not in (1, 2):
            raise ContractViolationError("mac_flops must be 1 or 2")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FlopsModel":
        try:
            return cls(
                llm_layers=int(doc["llm_layers"]),
                llm_hidden=int(doc["llm_hidden"]),
                llm_ffn=int(doc["llm_ffn"]),
                proj_dims=tuple((int(i), int(o)) for i, o in doc["proj_dims"]),
                mac_flops=int(doc.get("mac_flops", 2)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputFormatError(f"malformed FLOPs config: {exc}") from exc


def projector_pass_flops(model: FlopsModel) -> int:
    """FLOPs for one token through the projector (activations ignored)."""
    return sum(model.mac_flops * i * o for i, o in model.proj_dims)


def sensitivity_overhead_flops(model: FlopsModel, n_tokens: int, m: int) -> int:
    """Cost of the 2*n*m perturbed projector passes of one estimate."""
    if n_tokens < 1 or m < 1:
        raise ContractViolationError("n_tokens and m must be positive")
    return 2 * n_tokens * m * projector_pass_flops(model)


def llm_prefill_flops(model: FlopsModel, n_tokens: int) -> int:
    """Prefill cost of n_tokens through the LLM.

    Per layer, in MACs: 2*n*d^2 for the attention projections, n^2*d for
    score and value matmuls, n*d*ffn for the feed-forward block; scaled
    by the MAC convention and the layer count.
    """
    if n_tokens < 1:
        raise ContractViolationError("n_tokens must be positive")
    n, d, f = n_tokens, model.llm_hidden, model.llm_ffn
    per_layer_macs = 2 * n * d * d + n * n * d + n * d * f
    return model.llm_layers * model.mac_flops * per_layer_macs


def selection_overlap(a, b) -> float:
    """Jaccard overlap of two selections' index sets."""
    sa = set(a.indices if isinstance(a, SelectionResult) else a)
    sb = set(b.indices if isinstance(b, SelectionResult) else b)
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


@dataclass
class StageTiming:
    median_ms: float
    iqr_ms: float
    samples_ms: list[float]

    @classmethod
    def from_samples(cls, samples: list[float]) -> "StageTiming":
        qs = statistics.quantiles(samples, n=4) if len(samples) > 1 else [samples[0]] * 3
        return cls(
            median_ms=statistics.median(samples),
            iqr_ms=qs[2] - qs[0],
            samples_ms=samples,
        )


@dataclass
class TimingSummary:
    sensitivity: StageTiming
    selection: StageTiming
    total: StageTiming
    repeats_timed: int

    def to_json_dict(self) -> dict:
        return {
            "repeats_timed": self.repeats_timed,
            "sensitivity_ms": {"median": self.sensitivity.median_ms, "iqr": self.sensitivity.iqr_ms},
            "selection_ms": {"median": self.selection.median_ms, "iqr": self.selection.iqr_ms},
            "total_ms": {"median": self.total.median_ms, "iqr": self.total.iqr_ms},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def time_pipeline(
    projector: Projector,
    tokens: TokenMatrix,
    sens_config: SensitivityConfig,
    sel_config: SelectionConfig,
    repeats: int,
) -> TimingSummary:
    """Wall-clock the estimate+select pipeline; first iteration is warm-up.

    The selection stage includes the plain forward pass when diversity is
    measured in projected space, since that pass exists only to feed the
    selector.
    """
    if repeats < 3:
        raise ContractViolationError(f"repeats must be >= 3, got {repeats}")
    sens_ms: list[float] = []
    sel_ms: list[float] = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        report = estimate_sensitivity(projector, tokens, sens_config)
        t1 = time.perf_counter()
        if sel_config.diversity_space == "projected":
            features = projector.forward(tokens)
        else:
            features = tokens
        if sel_config.per_patch:
            select_per_patch(features, report, sel_config)
        else:
            select(features, report, sel_config)
        t2 = time.perf_counter()
        sens_ms.append((t1 - t0) * 1e3)
        sel_ms.append((t2 - t1) * 1e3)
    sens_ms, sel_ms = sens_ms[1:], sel_ms[1:]  # drop warm-up
    totals = [a + b for a, b in zip(sens_ms, sel_ms)]
    return TimingSummary(
        sensitivity=StageTiming.from_samples(sens_ms),
        selection=StageTiming.from_samples(sel_ms),
        total=StageTiming.from_samples(totals),
        repeats_timed=len(totals),
    )
