"""The projection MLP: batched forward, analytic Jacobian-vector products,
and truncated-SVD low-rank factorization.

Evaluation runs in float64. When the input is float32 (token matrices,
captured dumps) every layer boundary is rounded back to float32, which is
what a float32 inference stack would store; float64 inputs stay float64
end to end, which the finite-difference verification harness relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ContractViolationError
from .numerics import TokenMatrix

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715
_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu_tanh(z):
    return 0.5 * z * (1.0 + np.tanh(_SQRT_2_OVER_PI * (z + _GELU_CUBIC * z**3)))


def _gelu_tanh_deriv(z):
    inner = _SQRT_2_OVER_PI * (z + _GELU_CUBIC * z**3)
    t = np.tanh(inner)
    dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * z**2)
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * dinner


def _gelu_exact(z):
    return 0.5 * z * (1.0 + erf(z * _INV_SQRT_2))


def _gelu_exact_deriv(z):
    phi = 0.5 * (1.0 + erf(z * _INV_SQRT_2))
    return phi + z * _INV_SQRT_2PI * np.exp(-0.5 * z**2)


def _identity(z):
    return z


def _identity_deriv(z):
    return np.ones_like(z)


ACTIVATIONS = {
    "gelu_tanh": (_gelu_tanh, _gelu_tanh_deriv),
    "gelu_exact": (_gelu_exact, _gelu_exact_deriv),
    "identity": (_identity, _identity_deriv),
}


def _as_f32_readonly(a, name: str, ndim: int) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float32)
    if out.ndim != ndim:
        raise ContractViolationError(f"{name} must be {ndim}-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ContractViolationError(f"{name} contains non-finite entries")
    out.flags.writeable = False
    return out


@dataclass
class AffineLayer:
    """One y = Wx + b stage; weight is (out_dim, in_dim), float32 storage."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = _as_f32_readonly(self.weight, "weight", 2)
        self.bias = _as_f32_readonly(self.bias, "bias", 1)
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ContractViolationError(
                f"weight rows {self.weight.shape[0]} != bias length {self.bias.shape[0]}"
            )
        self._w64 = None
        self._b64 = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def w64(self) -> np.ndarray:
        if self._w64 is None:
            self._w64 = self.weight.astype(np.float64)
        return self._w64

    def b64(self) -> np.ndarray:
        if self._b64 is None:
            self._b64 = self.bias.astype(np.float64)
        return self._b64


@dataclass
class Projector:
    """Affine-activation-affine stack mapping token space into LLM space.

    ``activation`` sits between consecutive layers, never after the last.
    ``gap_activations`` overrides it per gap; low-rank factorization uses
    that to keep the inside of each factor pair linear. Immutable after
    construction; forward/jvp are pure and thread-safe.
    """

    layers: list[AffineLayer]
    activation: str = "gelu_tanh"
    gap_activations: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.layers:
            raise ContractViolationError("projector needs at least one layer")
        self.layers = list(self.layers)
        if self.activation not in ACTIVATIONS:
            raise ContractViolationError(
                f"unknown activation {self.activation!r}; expected one of {sorted(ACTIVATIONS)}"
            )
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ContractViolationError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        if self.gap_activations is not None:
            self.gap_activations = tuple(self.gap_activations)
            if len(self.gap_activations) != len(self.layers) - 1:
                raise ContractViolationError(
                    "gap_activations must have one entry per layer gap"
                )
            for g in self.gap_activations:
                if g not in ACTIVATIONS:
                    raise ContractViolationError(f"unknown activation {g!r}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def _gap(self, i: int) -> str:
        if self.gap_activations is not None:
            return self.gap_activations[i]
        return self.activation

    def _forward64(self, x64: np.ndarray, round_f32: bool) -> np.ndarray:
        h = x64
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = h @ layer.w64().T + layer.b64()
            if round_f32:
                h = h.astype(np.float32).astype(np.float64)
            if i < last:
                act = ACTIVATIONS[self._gap(i)][0]
                if act is not _identity:
                    h = act(h)
                    if round_f32:
                        h = h.astype(np.float32).astype(np.float64)
        return h

    def forward(self, x):
        """Evaluate the MLP on a TokenMatrix or on a raw 1-D/2-D array."""
        if isinstance(x, TokenMatrix):
            if x.dim != self.in_dim:
                raise ContractViolationError(
                    f"token dim {x.dim} != projector in_dim {self.in_dim}"
                )
            out = self._forward64(x.data.astype(np.float64), round_f32=True)
            return TokenMatrix(out.astype(np.float32), patch_ids=x.patch_ids)
        arr = np.asarray(x)
        if arr.ndim not in (1, 2) or arr.shape[-1] != self.in_dim:
            raise ContractViolationError(
                f"input shape {arr.shape} incompatible with in_dim {self.in_dim}"
            )
        round_f32 = arr.dtype == np.float32
        out = self._forward64(
            arr.reshape(-1, self.in_dim).astype(np.float64), round_f32=round_f32
        )
        if arr.ndim == 1:
            out = out[0]
        return out.astype(np.float32) if round_f32 else out

    def jvp(self, x, u) -> np.ndarray:
        """Exact J(x) @ u via forward-mode sweep, float64."""
        x64 = np.asarray(x, dtype=np.float64).ravel()
        u64 = np.asarray(u, dtype=np.float64).ravel()
        if x64.size != self.in_dim or u64.size != self.in_dim:
            raise ContractViolationError(
                f"jvp expects vectors of length {self.in_dim}, "
                f"got {x64.size} and {u64.size}"
            )
        first = self.layers[0]
        pre = first.w64() @ x64 + first.b64()
        v = first.w64() @ u64
        for i, layer in enumerate(self.layers[1:]):
            act, dact = ACTIVATIONS[self._gap(i)]
            v = dact(pre) * v
            h = act(pre)
            pre = layer.w64() @ h + layer.b64()
            v = layer.w64() @ v
        return v

    def factorize_low_rank(self, k: int) -> "Projector":
        """Replace each weight by its rank-k SVD factors W_a @ W_b.

        W_b = V_k^T (row-orthonormal, zero bias), W_a = U_k S_k carrying
        the original bias, so M(0) is preserved exactly.
        """
        if k < 1:
            raise ContractViolationError(f"rank k must be >= 1, got {k}")
        new_layers: list[AffineLayer] = []
        new_gaps: list[str] = []
        for i, layer in enumerate(self.layers):
            maxrank = min(layer.in_dim, layer.out_dim)
            if k > maxrank:
                raise ContractViolationError(
                    f"k={k} exceeds layer {i} max rank {maxrank}"
                )
            u, s, vt = np.linalg.svd(layer.w64(), full_matrices=False)
            w_a = (u[:, :k] * s[:k]).astype(np.float32)
            w_b = vt[:k].astype(np.float32)
            new_layers.append(AffineLayer(w_b, np.zeros(k, dtype=np.float32)))
            new_layers.append(AffineLayer(w_a, layer.bias))
            new_gaps.append("identity")
            if i < len(self.layers) - 1:
                new_gaps.append(self._gap(i))
        return Projector(
            layers=new_layers,
            activation=self.activation,
            gap_activations=tuple(new_gaps),
        )
