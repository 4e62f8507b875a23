"""Zeroth-order token sensitivity: symmetric finite differences through the
projector along random unit directions, averaged into one scalar per token.

The core estimate for token i over directions u_j is
    S(i) = mean_j || (M(x_i + h u_j) - M(x_i - h u_j)) / (2h) ||_2,
which approximates E_u ||J(x_i) u||_2 with an O(h^2) bias for smooth M.
``verify_convergence`` measures that bias directly against the analytic
Jacobian-vector product.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .numerics import (
    DirectionSet,
    TokenMatrix,
    _normals,
    derive_seed,
    minmax_normalize,
    sample_directions,
)
from .projector import Projector

_EPS64 = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class SensitivityConfig:
    """Estimator knobs: direction count m, step size h, seeding policy.

    share_directions=True reuses one direction set for every token, which
    is what makes the batched X +- hU evaluation possible; False gives
    each token its own stream (variance studies).
    """

    m: int = 64
    h: float = 0.01
    seed: int = 0
    share_directions: bool = True
    chunk_rows: int = 65536  # peak rows per batched forward pass

    def __post_init__(self):
        if self.m < 1:
            raise ContractViolationError(f"m must be >= 1, got {self.m}")
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ContractViolationError(f"h must be positive and finite, got {self.h}")
        if self.chunk_rows < 1:
            raise ContractViolationError("chunk_rows must be >= 1")


@dataclass
class SensitivityReport:
    raw: np.ndarray  # (N,) float32, >= 0
    normalized: np.ndarray  # (N,) float32 in [0, 1]
    config: SensitivityConfig

    def to_json_dict(self) -> dict:
        return {
            "raw": [float(v) for v in self.raw],
            "normalized": [float(v) for v in self.normalized],
            "m": self.config.m,
            "h": self.config.h,
            "seed": self.config.seed,
            "share_directions": self.config.share_directions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SensitivityReport":
        cfg = SensitivityConfig(
            m=int(doc["m"]),
            h=float(doc["h"]),
            seed=int(doc["seed"]),
            share_directions=bool(doc["share_directions"]),
        )
        return cls(
            raw=np.asarray(doc["raw"], dtype=np.float32),
            normalized=np.asarray(doc["normalized"], dtype=np.float32),
            config=cfg,
        )


def _chunk_norms(projector: Projector, plus: np.ndarray, minus: np.ndarray,
                 inv_2h: float) -> np.ndarray:
    z_plus = projector.forward(plus)
    z_minus = projector.forward(minus)
    delta = (z_plus - z_minus) * inv_2h
    if not np.all(np.isfinite(delta)):
        raise ContractViolationError(
            "projector produced non-finite outputs (corrupted weights or huge h)"
        )
    return np.sqrt(np.einsum("ij,ij->i", delta, delta))


def estimate_sensitivity(
    projector: Projector, tokens: TokenMatrix, config: SensitivityConfig
) -> SensitivityReport:
    """Per-token zeroth-order sensitivities, deterministic in all inputs.

    Perturbation, forward evaluation, and the norm reduction run in
    float64 (j ascending within each token, so the reduction order is
    fixed); the report stores float32.
    """
    if tokens.dim != projector.in_dim:
        raise ContractViolationError(
            f"token dim {tokens.dim} != projector in_dim {projector.in_dim}"
        )
    n, m, h = tokens.n_tokens, config.m, config.h
    x64 = tokens.data.astype(np.float64)
    inv_2h = 0.5 / h
    sums = np.zeros(n, dtype=np.float64)

    if config.share_directions:
        u64 = sample_directions(m, tokens.dim, config.seed).directions.astype(np.float64)
        total = n * m
        for start in range(0, total, config.chunk_rows):
            stop = min(start + config.chunk_rows, total)
            rows = np.arange(start, stop)
            tok = rows // m
            per = u64[rows % m] * h
            norms = _chunk_norms(projector, x64[tok] + per, x64[tok] - per, inv_2h)
            sums += np.bincount(tok, weights=norms, minlength=n)
    else:
        tokens_per_chunk = max(1, config.chunk_rows // m)
        for t0 in range(0, n, tokens_per_chunk):
            t1 = min(t0 + tokens_per_chunk, n)
            per = np.concatenate(
                [
                    sample_directions(m, tokens.dim, derive_seed(config.seed, i))
                    .directions.astype(np.float64)
                    for i in range(t0, t1)
                ]
            ) * h
            tok = np.repeat(np.arange(t0, t1), m)
            norms = _chunk_norms(projector, x64[tok] + per, x64[tok] - per, inv_2h)
            sums += np.bincount(tok, weights=norms, minlength=n)

    raw = (sums / m).astype(np.float32)
    return SensitivityReport(raw=raw, normalized=minmax_normalize(raw), config=config)


@dataclass
class ConvergenceTable:
    """Finite-difference error vs analytic JVP across probe points and h.

    errors[p, k] is the mean direction-wise L2 error at probe p, step
    h_values[k]; orders[p, k] the fitted order between steps k and k+1;
    roundoff flags steps where float cancellation, not the h^2 term,
    plausibly dominates the measured error.
    """

    h_values: tuple[float, ...]
    errors: np.ndarray  # (n_probes, n_h)
    orders: np.ndarray  # (n_probes, n_h - 1)
    roundoff: np.ndarray  # (n_probes, n_h) bool

    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)

    def mean_order(self) -> float:
        finite = self.orders[np.isfinite(self.orders)]
        return float(finite.mean()) if finite.size else float("nan")

    def rows(self) -> list[dict]:
        out = []
        for k, h in enumerate(self.h_values):
            row = {
                "h": h,
                "mean_error": float(self.errors[:, k].mean()),
                "roundoff_warning": bool(self.roundoff[:, k].any()),
            }
            if k + 1 < len(self.h_values):
                gap = self.orders[:, k]
                finite = gap[np.isfinite(gap)]
                row["fitted_order"] = float(finite.mean()) if finite.size else None
            out.append(row)
        return out

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows(), "mean_order": self.mean_order()})


def verify_convergence(
    projector: Projector,
    n_probes: int,
    h_values,
    seed: int,
    n_directions: int = 8,
) -> ConvergenceTable:
    """Measure ||finite-difference - jvp|| at each (probe, h); assert nothing.

    For affine projectors the error is pure round-off at every h; for
    smooth nonlinear ones it shrinks like h^2 until cancellation takes
    over (the roundoff column flags that regime).
    """
    h_values = tuple(float(h) for h in h_values)
    if n_probes < 1:
        raise ContractViolationError("n_probes must be >= 1")
    if not h_values or any(not (h > 0 and math.isfinite(h)) for h in h_values):
        raise ContractViolationError("h_values must be positive finite reals")
    if any(a <= b for a, b in zip(h_values, h_values[1:])):
        raise ContractViolationError("h_values must be sorted descending")

    dim = projector.in_dim
    errors = np.empty((n_probes, len(h_values)))
    roundoff = np.zeros((n_probes, len(h_values)), dtype=bool)
    for p in range(n_probes):
        x = _normals(derive_seed(seed, 2 * p), dim)
        dirs: DirectionSet = sample_directions(
            n_directions, dim, derive_seed(seed, 2 * p + 1)
        )
        u64 = dirs.directions.astype(np.float64)
        jvps = np.stack([projector.jvp(x, u64[j]) for j in range(n_directions)])
        out_scale = float(np.linalg.norm(projector.forward(x)))
        for k, h in enumerate(h_values):
            fd = (projector.forward(x + h * u64) - projector.forward(x - h * u64)) * (
                0.5 / h
            )
            err = float(np.linalg.norm(fd - jvps, axis=1).mean())
            errors[p, k] = err
            floor = _EPS64 * out_scale * (0.5 / h)
            roundoff[p, k] = err < 10.0 * floor
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = errors[:, :-1] / errors[:, 1:]
        steps = np.array(h_values[:-1]) / np.array(h_values[1:])
        orders = np.log(ratios) / np.log(steps)
    return ConvergenceTable(
        h_values=h_values, errors=errors, orders=orders, roundoff=roundoff
    )
