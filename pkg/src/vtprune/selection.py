"""Budget-constrained greedy token selection.

Four policies: multiplicative fusion of normalized sensitivity and
diversity (default), additive fusion, sensitivity-only top-k, and
diversity-only farthest-point sampling. Diversity of a candidate is one
minus its max cosine similarity to the already-selected set, maintained
incrementally in O(N) per pick; ties always break to the lowest index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError
from .numerics import TokenMatrix, cosine_similarity
from .sensitivity import SensitivityReport

POLICIES = ("fused_multiply", "fused_sum", "sensitivity_only", "diversity_only")
DIVERSITY_SPACES = ("projected", "raw")


@dataclass(frozen=True)
class SelectionConfig:
    budget_k: int
    policy: str = "fused_multiply"
    diversity_space: str = "projected"
    per_patch: bool = False
    per_patch_budget: int | None = None  # fixed tokens per patch; None = split budget_k

    def __post_init__(self):
        if self.budget_k < 1:
            raise ContractViolationError(f"budget_k must be >= 1, got {self.budget_k}")
        if self.policy not in POLICIES:
            raise ContractViolationError(
                f"unknown policy {self.policy!r}; expected one of {POLICIES}"
            )
        if self.diversity_space not in DIVERSITY_SPACES:
            raise ContractViolationError(
                f"unknown diversity_space {self.diversity_space!r}"
            )
        if self.per_patch_budget is not None and self.per_patch_budget < 1:
            raise ContractViolationError("per_patch_budget must be >= 1 when set")


@dataclass
class SelectionResult:
    indices: list[int]  # selection order preserved
    scores_at_selection: list[float]
    policy: str
    budget: int

    def to_json_dict(self) -> dict:
        return {
            "indices": self.indices,
            "scores": self.scores_at_selection,
            "policy": self.policy,
            "budget": self.budget,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    def to_mask(self, n_tokens: int) -> bytes:
        """One byte per token, 1 = kept."""
        mask = bytearray(n_tokens)
        for i in self.indices:
            mask[i] = 1
        return bytes(mask)


def _features_array(features) -> np.ndarray:
    data = features.data if isinstance(features, TokenMatrix) else np.asarray(features)
    if data.ndim != 2:
        raise ContractViolationError("features must be a 2-D matrix")
    return data


def _unit_rows(data: np.ndarray) -> np.ndarray:
    f = data.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", f, f))
    nz = norms > 0.0
    f[nz] /= norms[nz, None]  # zero rows stay zero: cos with anything is 0
    return f


def diversity_score(features, i: int, selected) -> float:
    """1 - max cosine similarity of token i to the selected set (1 if empty)."""
    data = _features_array(features)
    selected = list(selected)
    if not 0 <= i < data.shape[0]:
        raise ContractViolationError(f"token index {i} out of range")
    if i in selected:
        raise ContractViolationError(f"token {i} is already selected")
    if not selected:
        return 1.0
    return 1.0 - max(cosine_similarity(data[i], data[j]) for j in selected)


def _first_pick_farthest(f_unit: np.ndarray) -> tuple[int, float]:
    """Token maximizing its min distance (1 - cos) to all other tokens."""
    n = f_unit.shape[0]
    if n == 1:
        return 0, 1.0
    row_max = np.full(n, -np.inf)
    step = max(1, 2**22 // max(1, n))  # ~32MB of f64 per chunk
    for r0 in range(0, n, step):
        r1 = min(r0 + step, n)
        block = f_unit[r0:r1] @ f_unit.T
        block[np.arange(r0, r1) - r0, np.arange(r0, r1)] = -np.inf
        row_max[r0:r1] = block.max(axis=1)
    best = int(np.argmax(1.0 - row_max))
    return best, float(1.0 - row_max[best])


def _greedy(f_unit: np.ndarray, s_hat: np.ndarray, policy: str, k: int):
    n = f_unit.shape[0]
    indices: list[int] = []
    scores: list[float] = []
    selected = np.zeros(n, dtype=bool)
    track_div = policy != "sensitivity_only"

    if policy == "diversity_only":
        first, first_score = _first_pick_farthest(f_unit)
    else:
        first = int(np.argmax(np.where(selected, -np.inf, s_hat)))
        first_score = float(s_hat[first]) + 1.0 if policy == "fused_sum" else float(s_hat[first])
    indices.append(first)
    scores.append(first_score)
    selected[first] = True
    max_cos = f_unit @ f_unit[first] if track_div else None

    while len(indices) < k:
        if policy == "sensitivity_only":
            score = s_hat
        else:
            div = 1.0 - max_cos
            if policy == "fused_multiply":
                score = s_hat * div
            elif policy == "fused_sum":
                score = s_hat + div
            else:
                score = div
        best = int(np.argmax(np.where(selected, -np.inf, score)))
        indices.append(best)
        scores.append(float(score[best]))
        selected[best] = True
        if track_div:
            np.maximum(max_cos, f_unit @ f_unit[best], out=max_cos)
    return indices, scores


def select(features, sens, config: SelectionConfig) -> SelectionResult:
    """Greedy selection of config.budget_k tokens under the given policy.

    ``features`` is the matrix diversity is measured in (projected or raw,
    per the caller); sensitivities come in already normalized.
    """
    data = _features_array(features)
    s_hat = np.asarray(
        sens.normalized if isinstance(sens, SensitivityReport) else sens,
        dtype=np.float64,
    ).ravel()
    n = data.shape[0]
    if s_hat.size != n:
        raise ContractViolationError(
            f"sensitivity length {s_hat.size} != token count {n}"
        )
    if config.budget_k > n:
        raise ContractViolationError(
            f"budget {config.budget_k} exceeds token count {n}"
        )
    indices, scores = _greedy(_unit_rows(data), s_hat, config.policy, config.budget_k)
    return SelectionResult(
        indices=indices,
        scores_at_selection=scores,
        policy=config.policy,
        budget=config.budget_k,
    )


def patch_budgets(budget_k: int, n_patches: int) -> list[int]:
    """Equal split with the remainder going to the lowest-numbered patches."""
    base, extra = divmod(budget_k, n_patches)
    return [base + (1 if p < extra else 0) for p in range(n_patches)]


def select_per_patch(features, sens, config: SelectionConfig) -> SelectionResult:
    """Run selection independently inside each image patch.

    The global budget splits evenly across patches unless
    config.per_patch_budget pins a fixed count per patch. Normalized
    sensitivities are taken from the global report, not re-normalized
    per patch; the result concatenates per-patch picks in patch order.
    """
    if not isinstance(features, TokenMatrix) or features.patch_ids is None:
        raise ContractViolationError("per-patch selection requires patch_ids")
    if not config.per_patch:
        raise ContractViolationError("config.per_patch must be true")
    s_hat = np.asarray(
        sens.normalized if isinstance(sens, SensitivityReport) else sens,
        dtype=np.float64,
    ).ravel()
    n = features.n_tokens
    if s_hat.size != n:
        raise ContractViolationError(
            f"sensitivity length {s_hat.size} != token count {n}"
        )
    n_patches = features.n_patches
    if config.per_patch_budget is not None:
        budgets = [config.per_patch_budget] * n_patches
    else:
        budgets = patch_budgets(config.budget_k, n_patches)
    f_unit = _unit_rows(features.data)
    indices: list[int] = []
    scores: list[float] = []
    for p in range(n_patches):
        member = np.flatnonzero(features.patch_ids == p)
        if member.size < budgets[p]:
            raise ContractViolationError(
                f"patch {p} has {member.size} tokens, fewer than its budget {budgets[p]}"
            )
        if budgets[p] == 0:
            continue
        local_idx, local_scores = _greedy(
            f_unit[member], s_hat[member], config.policy, budgets[p]
        )
        indices.extend(int(member[i]) for i in local_idx)
        scores.extend(local_scores)
    return SelectionResult(
        indices=indices,
        scores_at_selection=scores,
        policy=config.policy,
        budget=sum(budgets),
    )
