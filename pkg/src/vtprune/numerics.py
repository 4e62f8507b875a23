"""Dense token storage, deterministic Gaussian direction sampling, and the
vector primitives the rest of the engine builds on.

Reproducibility contract: random directions come from a PCG-XSH-RR 64/32
stream keyed by the seed, turned into standard normals with Box-Muller
pairs. Intermediate arithmetic runs in float64 and results are stored in
float32, so the stored values do not depend on platform libm/BLAS rounding
at float32 resolution and golden files survive re-implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError

GENERATOR_ID = "pcg32-xsh-rr/box-muller/v1"

_PCG_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
# splitmix64 finalizer, used to derive per-token sub-seeds
_GOLDEN64 = 0x9E3779B97F4A7C15


def _pcg_init(seed: int) -> tuple[int, int]:
    """State and increment after pcg32_srandom(initstate=seed, initseq=seed)."""
    seed &= _MASK64
    inc = ((seed << 1) | 1) & _MASK64
    state = inc  # 0 * mult + inc
    state = (state + seed) & _MASK64
    state = (state * _PCG_MULT + inc) & _MASK64
    return state, inc


def _pcg32_block(seed: int, start: int, count: int) -> np.ndarray:
    """uint32 outputs [start, start+count) of the stream keyed by seed.

    The state recurrence s -> a*s + c is affine, so k steps compose to
    another affine map; that lets us jump to `start` by repeated squaring
    and fill the block with two sqrt(count)-sized scans instead of a
    sequential Python loop.
    """
    if count <= 0:
        return np.empty(0, dtype=np.uint32)
    state, inc = _pcg_init(seed)

    a, c = _PCG_MULT, inc
    # jump ahead `start` steps
    ja, jc = 1, 0
    n = start
    while n > 0:
        if n & 1:
            ja, jc = (a * ja) & _MASK64, (a * jc + c) & _MASK64
        a, c = (a * a) & _MASK64, ((a * c + c)) & _MASK64
        n >>= 1
    s0 = (ja * state + jc) & _MASK64

    # step tables: state at s0 + j steps is A[j]*s0 + C[j]
    k = math.isqrt(count) + 1
    A = np.empty(k, dtype=np.uint64)
    C = np.empty(k, dtype=np.uint64)
    aj, cj = 1, 0
    for j in range(k):
        A[j] = aj
        C[j] = cj
        aj, cj = (aj * _PCG_MULT) & _MASK64, (cj * _PCG_MULT + inc) & _MASK64
    ak, ck = aj, cj  # k-step map

    nblocks = (count + k - 1) // k
    starts = np.empty(nblocks, dtype=np.uint64)
    sb = s0
    for b in range(nblocks):
        starts[b] = sb
        sb = (ak * sb + ck) & _MASK64

    states = (starts[:, None] * A[None, :] + C[None, :]).reshape(-1)[:count]

    # XSH-RR output permutation
    xorshifted = (((states >> np.uint64(18)) ^ states) >> np.uint64(27)).astype(
        np.uint32
    )
    rot = (states >> np.uint64(59)).astype(np.uint32)
    return (xorshifted >> rot) | (xorshifted << ((np.uint32(32) - rot) & np.uint32(31)))


def _normals(seed: int, count: int, u32_offset: int = 0) -> np.ndarray:
    """float64 standard normals via Box-Muller; one uint32 draw per normal."""
    if count <= 0:
        return np.empty(0, dtype=np.float64)
    npairs = (count + 1) // 2
    raw = _pcg32_block(seed, u32_offset, 2 * npairs).astype(np.float64)
    u1 = (raw[0::2] + 1.0) * 2.0**-32  # (0, 1]: log stays finite
    u2 = raw[1::2] * 2.0**-32  # [0, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * math.pi) * u2
    z = np.empty(2 * npairs, dtype=np.float64)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:count]


def derive_seed(seed: int, index: int) -> int:
    """Deterministic sub-stream seed for (seed, index), splitmix64-mixed."""
    z = (seed + (index + 1) * _GOLDEN64) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class TokenMatrix:
    """N x d matrix of token embeddings, rows = tokens, float32 storage.

    patch_ids, when present, assigns every token to an image patch; ids
    must cover a contiguous range starting at 0.
    """

    data: np.ndarray
    patch_ids: np.ndarray | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ContractViolationError(
                f"token matrix must be 2-D and non-empty, got shape {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ContractViolationError("token matrix contains non-finite entries")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if self.patch_ids is not None:
            ids = np.ascontiguousarray(self.patch_ids, dtype=np.int32)
            if ids.shape != (data.shape[0],):
                raise ContractViolationError(
                    f"patch_ids length {ids.shape} != n_tokens {data.shape[0]}"
                )
            uniq = np.unique(ids)
            if ids.size and (uniq[0] != 0 or not np.array_equal(
                    uniq, np.arange(uniq[-1] + 1, dtype=np.int32))):
                raise ContractViolationError(
                    "patch_ids must cover a contiguous range starting at 0"
                )
            ids.flags.writeable = False
            object.__setattr__(self, "patch_ids", ids)

    @property
    def n_tokens(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def n_patches(self) -> int:
        if self.patch_ids is None:
            return 1
        return int(self.patch_ids.max()) + 1


@dataclass(frozen=True)
class DirectionSet:
    """m unit-norm perturbation directions plus the recipe that made them."""

    directions: np.ndarray  # (m, dim) float32, rows unit-norm
    seed: int
    generator_id: str = GENERATOR_ID

    @property
    def m(self) -> int:
        return self.directions.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]


def sample_directions(m: int, dim: int, seed: int) -> DirectionSet:
    """Sample m unit-norm Gaussian directions, direction-major order.

    Pure function of (m, dim, seed): repeated calls are bit-identical.
    """
    if m < 1 or dim < 1:
        raise ContractViolationError(f"m and dim must be >= 1, got m={m} dim={dim}")
    n = m * dim
    z = _normals(seed, n).astype(np.float32).reshape(m, dim)
    consumed = 2 * ((n + 1) // 2)
    norms = np.sqrt(np.einsum("ij,ij->i", z.astype(np.float64), z.astype(np.float64)))
    while np.any(norms == 0.0):  # probability ~0; redraw from the next stream values
        row = int(np.flatnonzero(norms == 0.0)[0])
        fresh = _normals(seed, dim, u32_offset=consumed).astype(np.float32)
        consumed += 2 * ((dim + 1) // 2)
        z[row] = fresh
        norms[row] = math.sqrt(float(np.dot(fresh.astype(np.float64), fresh.astype(np.float64))))
    directions = (z.astype(np.float64) / norms[:, None]).astype(np.float32)
    directions.flags.writeable = False
    return DirectionSet(directions=directions, seed=int(seed) & _MASK64)


def cosine_similarity(a, b) -> float:
    """cos(a, b) in [-1, 1]; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolationError(
            f"vector length mismatch: {a.shape[0]} vs {b.shape[0]}"
        )
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb))))


def minmax_normalize(values) -> np.ndarray:
    """Rescale to [0, 1]; a constant vector maps to all ones."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ContractViolationError("minmax_normalize: empty input")
    if not np.all(np.isfinite(v)):
        raise ContractViolationError("minmax_normalize: non-finite input")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.ones(v.size, dtype=np.float32)
    return ((v - lo) / (hi - lo)).astype(np.float32)
