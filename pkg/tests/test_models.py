import numpy as np
import pytest
import torch

import specvae as sv
from specvae.models import (
    CNNClassifier,
    GaussianVAE,
    HybridPhysicsVAE,
    PhysicsGuidedVAE,
    PhysicsLayer,
    PosteriorEncoder,
    ReflectanceDecoder,
    SegmentedSpectralConv,
    mc_dropout_predict,
    one_hot,
)
from specvae.physics import correction_ratio

C = 5
N_A = 4


@pytest.fixture()
def hvae(small_grid, small_irr):
    torch.manual_seed(0)
    return HybridPhysicsVAE(small_grid, small_irr, C, N_A)


@pytest.fixture()
def batch(small_grid):
    torch.manual_seed(1)
    x = torch.rand(6, small_grid.n_bands)
    y = torch.tensor([0, 1, 2, 3, 4, 0])
    return x, y


class TestComponents:
    def test_one_hot(self):
        oh = one_hot(torch.tensor([2, 0]), 3)
        expected = torch.tensor([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        assert torch.equal(oh, expected)

    def test_segmented_conv_output_length(self, small_grid):
        conv = SegmentedSpectralConv(small_grid)
        x = torch.rand(3, small_grid.n_bands)
        out = conv(x)
        assert out.shape == (3, conv.out_features)
        # pooled halves of each segment, times the channel count
        expected = sum(((b - a) // 2) for a, b in small_grid.segments)
        assert conv.out_features == expected * 4

    def test_classifier_probabilities(self, small_grid, batch):
        clf = CNNClassifier(small_grid, C)
        clf.eval()
        x, _ = batch
        p = clf.classify(x)
        assert p.shape == (6, C)
        assert torch.all(p >= 0)
        torch.testing.assert_close(p.sum(-1), torch.ones(6))


class TestReflectanceDecoder:
    def test_basis_in_unit_interval(self, small_grid):
        dec = ReflectanceDecoder(small_grid.n_bands, C, N_A)
        table = dec.basis_table()
        assert table.shape == (C, small_grid.n_bands, N_A)
        assert torch.all(table > 0) and torch.all(table < 1)

    def test_decode_is_convex_combination(self, small_grid):
        dec = ReflectanceDecoder(small_grid.n_bands, C, N_A)
        y = torch.tensor([2])
        z_a = torch.tensor([[0.1, 0.2, 0.3, 0.4]])
        out = dec(y, z_a)
        expected = (dec.basis_table()[2] * z_a[0]).sum(-1)
        torch.testing.assert_close(out[0], expected)
        # convex weights keep the mixture inside [0, 1]
        assert torch.all(out >= 0) and torch.all(out <= 1)

    def test_all_classes_matches_per_class(self, small_grid):
        dec = ReflectanceDecoder(small_grid.n_bands, C, N_A)
        torch.manual_seed(2)
        z_a = torch.softmax(torch.randn(C, 3, N_A), dim=-1)
        stacked = dec.all_classes(z_a)
        for c in range(C):
            y = torch.full((3,), c)
            torch.testing.assert_close(stacked[c], dec(y, z_a[c]))

    def test_detach_blocks_gradients(self, small_grid):
        dec = ReflectanceDecoder(small_grid.n_bands, C, N_A)
        z_a = torch.full((1, N_A), 0.25, requires_grad=True)
        out = dec(torch.tensor([0]), z_a, detach_basis=True)
        out.sum().backward()
        assert z_a.grad is not None
        assert all(p.grad is None for p in dec.parameters())


class TestPhysicsLayer:
    def test_ratio_matches_reference(self, small_irr):
        layer = PhysicsLayer(small_irr)
        z_p = torch.tensor([0.3, 0.9], dtype=torch.float64)
        got = layer.ratio(z_p).numpy()
        for i, z in enumerate((0.3, 0.9)):
            expected = correction_ratio(z, z + 0.2, small_irr)
            np.testing.assert_allclose(got[i], expected, rtol=1e-12)

    def test_forward_scales_reflectance(self, small_irr, small_grid):
        layer = PhysicsLayer(small_irr)
        rho = torch.rand(2, small_grid.n_bands, dtype=torch.float64)
        z_p = torch.tensor([0.5, 1.0], dtype=torch.float64)
        torch.testing.assert_close(layer(rho, z_p), layer.ratio(z_p) * rho)


class TestHybridPhysicsVAE:
    def test_forward_shapes(self, hvae, batch):
        x, y = batch
        mu, z_p, z_a, (q_zp, q_za) = hvae(x, y)
        assert mu.shape == x.shape
        assert z_p.shape == (6,)
        assert z_a.shape == (6, N_A)
        torch.testing.assert_close(z_a.sum(-1), torch.ones(6))
        assert torch.all(z_p >= 0) and torch.all(z_p <= 1)

    def test_decode_composes_physics_and_mixture(self, hvae):
        y = torch.tensor([1])
        z_a = torch.full((1, N_A), 0.25)
        z_p = torch.tensor([0.7])
        expected = hvae.physics(hvae.decoder(y, z_a), z_p)
        torch.testing.assert_close(hvae.decode(y, z_a, z_p), expected)

    def test_decode_all_classes_matches_loop(self, hvae):
        torch.manual_seed(3)
        z_a = torch.softmax(torch.randn(C, 2, N_A), dim=-1)
        z_p = torch.rand(C, 2)
        stacked = hvae.decode_all_classes(z_a, z_p)
        for c in range(C):
            y = torch.full((2,), c)
            torch.testing.assert_close(stacked[c], hvae.decode(y, z_a[c], z_p[c]))

    def test_posterior_parameters_positive(self, hvae, batch):
        x, y = batch
        (a, b), gamma = hvae.encode(x, y)
        assert torch.all(a > 0) and torch.all(b > 0) and torch.all(gamma > 0)

    def test_physics_guided_ignores_z_p(self, small_grid, small_irr):
        torch.manual_seed(0)
        model = PhysicsGuidedVAE(small_grid, small_irr, C, N_A)
        y = torch.tensor([0])
        z_a = torch.full((1, N_A), 0.25)
        out1 = model.decode(y, z_a, torch.tensor([0.1]))
        out2 = model.decode(y, z_a, torch.tensor([0.9]))
        torch.testing.assert_close(out1, out2)


class TestGaussianVAE:
    def test_forward_shapes(self, small_grid, batch):
        torch.manual_seed(0)
        model = GaussianVAE(small_grid, C, N_A)
        x, y = batch
        mu, z, (mean, logvar) = model(x, y)
        assert mu.shape == x.shape
        assert z.shape == (6, N_A + 1)
        assert mean.shape == logvar.shape == (6, N_A + 1)
        assert torch.all(mu >= 0) and torch.all(mu <= 1)

    def test_decode_all_classes_matches_loop(self, small_grid):
        torch.manual_seed(0)
        model = GaussianVAE(small_grid, C, N_A)
        z = torch.randn(C, 3, N_A + 1)
        stacked = model.decode_all_classes(z)
        for c in range(C):
            y = torch.full((3,), c)
            torch.testing.assert_close(stacked[c], model.decode(y, z[c]))

    def test_logvar_clamped(self, small_grid, batch):
        torch.manual_seed(0)
        model = GaussianVAE(small_grid, C, N_A)
        x, y = batch
        _, logvar = model.encode(x, y)
        assert torch.all(logvar >= -10.0) and torch.all(logvar <= 10.0)


class TestMCDropout:
    def test_single_pass_is_deterministic(self, small_grid, batch):
        torch.manual_seed(0)
        clf = CNNClassifier(small_grid, C)
        x, _ = batch
        mean, std = mc_dropout_predict(clf, x, n_passes=1)
        clf.eval()
        torch.testing.assert_close(mean, clf.classify(x))
        torch.testing.assert_close(std, torch.zeros_like(std))

    def test_multi_pass_shapes_and_spread(self, small_grid, batch):
        torch.manual_seed(0)
        clf = CNNClassifier(small_grid, C)
        x, _ = batch
        mean, std = mc_dropout_predict(clf, x, n_passes=20)
        assert mean.shape == std.shape == (6, C)
        torch.testing.assert_close(mean.sum(-1), torch.ones(6))
        assert std.max() > 0  # dropout active between passes

    def test_restores_training_flag(self, small_grid, batch):
        clf = CNNClassifier(small_grid, C)
        clf.train()
        mc_dropout_predict(clf, batch[0], n_passes=2)
        assert clf.training

    def test_rejects_zero_passes(self, small_grid, batch):
        clf = CNNClassifier(small_grid, C)
        with pytest.raises(ValueError):
            mc_dropout_predict(clf, batch[0], n_passes=0)


class TestPosteriorEncoderAllClasses:
    def test_matches_per_class(self, small_grid, batch):
        torch.manual_seed(0)
        enc = PosteriorEncoder(small_grid, C, N_A)
        x, _ = batch
        (a_all, b_all), g_all = enc.all_classes(x)
        assert a_all.shape == (C, 6)
        assert g_all.shape == (C, 6, N_A)
        for c in range(C):
            y = torch.full((6,), c)
            (a, b), g = enc(x, y)
            torch.testing.assert_close(a_all[c], a)
            torch.testing.assert_close(b_all[c], b)
            torch.testing.assert_close(g_all[c], g)
