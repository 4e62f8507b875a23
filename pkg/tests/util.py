"""Deterministic builders shared across the test modules.

Everything derives from the package's own seeded stream so fixtures are
identical on every platform.
"""

import numpy as np

from vtprune.numerics import TokenMatrix, _normals
from vtprune.projector import AffineLayer, Projector


def make_projector(dims, seed, activation="gelu_tanh", weight_scale=None):
    """MLP with the given (in, out) chain; weights ~ N(0, scale^2)."""
    layers = []
    s = seed
    for in_dim, out_dim in dims:
        scale = weight_scale if weight_scale is not None else 1.0 / np.sqrt(in_dim)
        w = _normals(s, out_dim * in_dim).reshape(out_dim, in_dim) * scale
        b = _normals(s + 1, out_dim) * 0.05
        layers.append(AffineLayer(w.astype(np.float32), b.astype(np.float32)))
        s += 2
    return Projector(layers, activation=activation)


def make_tokens(n, dim, seed, n_patches=None):
    data = _normals(seed, n * dim).reshape(n, dim).astype(np.float32)
    patch_ids = None
    if n_patches is not None:
        patch_ids = (np.arange(n) * n_patches // n).astype(np.int32)
    return TokenMatrix(data, patch_ids=patch_ids)
