import math

import numpy as np
import pytest

from util import make_projector, make_tokens

from vtprune.errors import ContractViolationError
from vtprune.numerics import TokenMatrix, _normals
from vtprune.projector import AffineLayer, Projector


def identity_projector(dim):
    return Projector(
        [AffineLayer(np.eye(dim, dtype=np.float32), np.zeros(dim, dtype=np.float32))],
        activation="identity",
    )


class TestForward:
    def test_identity_map(self):
        p = identity_projector(4)
        x = make_tokens(5, 4, seed=1)
        assert np.array_equal(p.forward(x).data, x.data)

    def test_zero_weights_output_bias(self):
        b2 = np.array([1.5, -2.0], dtype=np.float32)
        p = Projector(
            [
                AffineLayer(np.zeros((3, 2), np.float32), np.array([0.3, 0.1, -0.2], np.float32)),
                AffineLayer(np.zeros((2, 3), np.float32), b2),
            ]
        )
        out = p.forward(make_tokens(6, 2, seed=2))
        assert np.allclose(out.data, np.tile(b2, (6, 1)))

    def test_matches_scalar_neuron_evaluation(self):
        # hand-evaluate affine -> gelu -> affine one neuron at a time
        p = make_projector([(2, 3), (3, 2)], seed=30)
        w1, b1 = p.layers[0].weight, p.layers[0].bias
        w2, b2 = p.layers[1].weight, p.layers[1].bias

        def gelu(v):
            return 0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v**3)))

        xs = _normals(31, 8).reshape(4, 2)
        out = p.forward(xs)
        for r in range(4):
            z1 = [sum(float(w1[i, j]) * xs[r, j] for j in range(2)) + float(b1[i]) for i in range(3)]
            a1 = [gelu(v) for v in z1]
            z2 = [sum(float(w2[i, j]) * a1[j] for j in range(3)) + float(b2[i]) for i in range(2)]
            assert np.allclose(out[r], z2, atol=1e-5)

    def test_batch_equals_row_by_row(self):
        p = make_projector([(6, 10), (10, 4)], seed=40)
        x = make_tokens(9, 6, seed=41)
        batch = p.forward(x).data
        rows = np.stack([p.forward(x.data[i]) for i in range(9)])
        assert np.array_equal(batch, rows)

    def test_patch_ids_carried_through(self):
        p = make_projector([(4, 3)], seed=42)
        x = make_tokens(8, 4, seed=43, n_patches=2)
        assert np.array_equal(p.forward(x).patch_ids, x.patch_ids)

    def test_dim_mismatch(self):
        p = make_projector([(4, 3)], seed=44)
        with pytest.raises(ContractViolationError):
            p.forward(make_tokens(5, 6, seed=45))

    def test_non_chaining_layers_rejected(self):
        with pytest.raises(ContractViolationError):
            Projector(
                [
                    AffineLayer(np.zeros((3, 2), np.float32), np.zeros(3, np.float32)),
                    AffineLayer(np.zeros((2, 4), np.float32), np.zeros(2, np.float32)),
                ]
            )

    def test_unknown_activation_rejected(self):
        with pytest.raises(ContractViolationError):
            Projector(
                [AffineLayer(np.zeros((2, 2), np.float32), np.zeros(2, np.float32))],
                activation="relu",
            )


class TestJvp:
    def test_single_affine_layer_is_weight_times_u(self):
        p = make_projector([(5, 7)], seed=50, activation="identity")
        w64 = p.layers[0].weight.astype(np.float64)
        for t in range(5):
            x = _normals(51 + t, 5)
            u = _normals(61 + t, 5)
            assert np.array_equal(p.jvp(x, u), w64 @ u)

    def test_identity_activation_chain(self):
        p = make_projector([(4, 6), (6, 3)], seed=52, activation="identity")
        w1 = p.layers[0].weight.astype(np.float64)
        w2 = p.layers[1].weight.astype(np.float64)
        x = _normals(53, 4)
        u = _normals(54, 4)
        assert np.allclose(p.jvp(x, u), w2 @ (w1 @ u), atol=1e-6)

    @pytest.mark.parametrize("activation", ["gelu_tanh", "gelu_exact"])
    def test_matches_central_difference(self, activation):
        p = make_projector([(4, 8), (8, 3)], seed=55, activation=activation)
        h = 1e-4
        for t in range(10):
            x = _normals(70 + t, 4)
            u = _normals(90 + t, 4)
            u = u / np.linalg.norm(u)
            fd = (p.forward(x + h * u) - p.forward(x - h * u)) / (2 * h)
            jv = p.jvp(x, u)
            assert np.linalg.norm(fd - jv) / np.linalg.norm(jv) < 1e-4

    def test_dim_mismatch(self):
        p = make_projector([(4, 3)], seed=56)
        with pytest.raises(ContractViolationError):
            p.jvp(np.zeros(4), np.zeros(3))

    def test_affine_exactness_over_h_range(self):
        # zero curvature: the finite difference equals the jvp at ANY h
        p = make_projector([(16, 16), (16, 8)], seed=57, activation="identity")
        x = _normals(58, 16)
        u = _normals(59, 16)
        u = u / np.linalg.norm(u)
        jv = p.jvp(x, u)
        for h in (1e-6, 1e-4, 1e-2, 1.0):
            fd = (p.forward(x + h * u) - p.forward(x - h * u)) / (2 * h)
            assert np.linalg.norm(fd - jv) < 1e-5

    def test_quadratic_error_shrink(self):
        # e(h)/e(h/2) stays in [3, 5] for a smooth nonlinear map
        p = make_projector([(8, 16), (16, 8)], seed=60)
        ratios = []
        for t in range(20):
            x = _normals(100 + t, 8)
            u = _normals(200 + t, 8)
            u = u / np.linalg.norm(u)
            jv = p.jvp(x, u)
            for h in (1e-2, 5e-3, 2e-3):
                e_h = np.linalg.norm((p.forward(x + h * u) - p.forward(x - h * u)) / (2 * h) - jv)
                e_h2 = np.linalg.norm(
                    (p.forward(x + h / 2 * u) - p.forward(x - h / 2 * u)) / h - jv
                )
                ratios.append(e_h / e_h2)
        mean_ratio = float(np.mean(ratios))
        assert 3.0 <= mean_ratio <= 5.0


class TestFactorizeLowRank:
    def test_full_rank_diagonal_is_exact(self):
        diag = np.diag([3.0, -1.0, 0.5, 2.0]).astype(np.float32)
        p = Projector([AffineLayer(diag, np.zeros(4, np.float32))], activation="identity")
        f = p.factorize_low_rank(4)
        xs = _normals(61, 40).reshape(10, 4)
        assert np.allclose(p.forward(xs), f.forward(xs), atol=1e-4)

    def test_rank_one_weight_reconstructed(self):
        a = _normals(62, 4).reshape(4, 1)
        b = _normals(63, 6).reshape(1, 6)
        w = (a @ b).astype(np.float32)
        p = Projector([AffineLayer(w, np.zeros(4, np.float32))], activation="identity")
        f = p.factorize_low_rank(1)
        recon = f.layers[1].weight.astype(np.float64) @ f.layers[0].weight.astype(np.float64)
        assert np.abs(recon - w).max() < 1e-5
        xs = _normals(64, 30).reshape(5, 6)
        assert np.allclose(p.forward(xs), f.forward(xs), atol=1e-5)

    def test_rank1_error_equals_second_singular_value(self):
        # build a 2x2 with known singular values via rotations
        s1, s2 = 2.0, 0.7
        t1, t2 = 0.3, 1.1
        r1 = np.array([[math.cos(t1), -math.sin(t1)], [math.sin(t1), math.cos(t1)]])
        r2 = np.array([[math.cos(t2), -math.sin(t2)], [math.sin(t2), math.cos(t2)]])
        w = (r1 @ np.diag([s1, s2]) @ r2).astype(np.float32)
        p = Projector([AffineLayer(w, np.zeros(2, np.float32))], activation="identity")
        f = p.factorize_low_rank(1)
        recon = f.layers[1].weight.astype(np.float64) @ f.layers[0].weight.astype(np.float64)
        frob = np.linalg.norm(w.astype(np.float64) - recon)
        assert abs(frob - s2) < 1e-4

    def test_tail_energy_bound(self):
        # reconstruction error^2 <= sum of squared dropped singular values,
        # checked against an independent Gram-matrix eigenvalue route
        w = _normals(65, 8 * 6).reshape(8, 6).astype(np.float32)
        p = Projector([AffineLayer(w, np.zeros(8, np.float32))], activation="identity")
        gram_eigs = np.linalg.eigvalsh(w.astype(np.float64).T @ w.astype(np.float64))
        sv2_desc = np.sort(gram_eigs)[::-1]  # sigma_i^2, descending
        for k in (1, 2, 4, 6):
            f = p.factorize_low_rank(k)
            recon = f.layers[1].weight.astype(np.float64) @ f.layers[0].weight.astype(np.float64)
            err2 = float(np.linalg.norm(w.astype(np.float64) - recon) ** 2)
            assert err2 <= float(sv2_desc[k:].sum()) + 1e-6

    def test_bias_preserved_at_zero_input(self):
        # single layer: M(0) = b survives any truncation level
        p1 = make_projector([(6, 4)], seed=66, activation="identity")
        f1 = p1.factorize_low_rank(1)
        assert np.array_equal(f1.forward(np.zeros(6)), p1.layers[0].bias.astype(np.float64))
        # multi-layer at full rank: M(0) preserved end to end
        p = make_projector([(6, 4), (4, 5)], seed=66)
        f = p.factorize_low_rank(4)
        z = np.zeros(6, dtype=np.float64)
        assert np.allclose(p.forward(z), f.forward(z), atol=1e-5)

    def test_wb_rows_orthonormal(self):
        p = make_projector([(8, 5)], seed=67, activation="identity")
        f = p.factorize_low_rank(3)
        wb = f.layers[0].weight.astype(np.float64)
        assert np.allclose(wb @ wb.T, np.eye(3), atol=1e-6)

    def test_k_too_large_rejected(self):
        p = make_projector([(4, 3)], seed=68)
        with pytest.raises(ContractViolationError):
            p.factorize_low_rank(4)

    def test_factorized_forward_close_on_tokens(self):
        p = make_projector([(8, 12), (12, 8)], seed=69)
        f = p.factorize_low_rank(8)  # both layers have rank <= 8
        x = make_tokens(10, 8, seed=70)
        assert np.allclose(p.forward(x).data, f.forward(x).data, atol=1e-4)


class TestAffineLayerValidation:
    def test_rejects_non_finite(self):
        w = np.zeros((2, 2), np.float32)
        w[0, 0] = np.inf
        with pytest.raises(ContractViolationError):
            AffineLayer(w, np.zeros(2, np.float32))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ContractViolationError):
            AffineLayer(np.zeros((2, 2), np.float32), np.zeros(3, np.float32))
