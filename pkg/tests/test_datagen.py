import numpy as np
import pytest

import specvae as sv
from specvae.core import InvalidConfigError
from specvae.datagen import (
    CLASS_NAMES,
    SINGLE_IRRADIANCE_CLASS,
    SUBCLASS_COUNTS,
    SUNLIT_ONLY_CLASSES,
    TILE_CLASS,
    UNLABELED,
    SceneConfig,
    load_irradiance,
    save_irradiance,
)
from specvae.io import ContainerError


@pytest.fixture(scope="module")
def scene(small_grid_mod, small_irr_mod):
    cfg = SceneConfig(seed=5, train_labeled_per_class=20,
                      train_unlabeled_per_class=40, val_per_class=8,
                      test_per_class=12)
    lib = sv.build_material_library(small_grid_mod, 5)
    ds = sv.generate_dataset(cfg, lib, small_irr_mod, small_grid_mod)
    return cfg, lib, ds


@pytest.fixture(scope="module")
def small_grid_mod():
    return sv.make_wavelength_grid(40, 0.0065, gaps=[(0.52, 0.55)])


@pytest.fixture(scope="module")
def small_irr_mod(small_grid_mod):
    return sv.synth_irradiance(small_grid_mod, 30.0)


class TestMaterialLibrary:
    def test_subclass_counts(self, grid):
        lib = sv.build_material_library(grid, 0)
        assert lib.classes == CLASS_NAMES
        for i, name in enumerate(CLASS_NAMES):
            assert lib.n_subclasses(i) == SUBCLASS_COUNTS[name]

    def test_vegetation_red_edge(self, grid):
        lib = sv.build_material_library(grid, 0)
        w = grid.wavelengths
        red = int(np.argmin(np.abs(w - 0.66)))
        nir = int(np.argmin(np.abs(w - 0.85)))
        for rho in lib.rho[0]:
            assert rho[nir] > 2.0 * rho[red]

    def test_clay_dip_for_tile(self, grid):
        lib = sv.build_material_library(grid, 0)
        w = grid.wavelengths
        dip = int(np.argmin(np.abs(w - 2.2)))
        shoulder = int(np.argmin(np.abs(w - 2.1)))
        for rho in lib.rho[TILE_CLASS]:
            assert rho[dip] < rho[shoulder]

    def test_deterministic_given_seed(self, grid):
        a = sv.build_material_library(grid, 3)
        b = sv.build_material_library(grid, 3)
        for sa, sb in zip(a.rho, b.rho):
            for ra, rb in zip(sa, sb):
                np.testing.assert_array_equal(ra, rb)


class TestSceneConfig:
    def test_rejects_nonpositive_counts(self):
        with pytest.raises(InvalidConfigError):
            SceneConfig(train_labeled_per_class=0)

    def test_rejects_infeasible_shadow_threshold(self):
        with pytest.raises(InvalidConfigError):
            SceneConfig(shadow_threshold=1.0)

    def test_rejects_negative_noise(self):
        with pytest.raises(InvalidConfigError):
            SceneConfig(noise_sigma=-0.1)


class TestSplits:
    def test_split_sizes_exact(self, scene):
        cfg, _, ds = scene
        C = len(CLASS_NAMES)
        n_train = C * (cfg.train_labeled_per_class + cfg.train_unlabeled_per_class)
        assert ds["train"].n_rows == n_train
        assert ds["val"].n_rows == C * cfg.val_per_class
        assert ds["test"].n_rows == C * cfg.test_per_class
        for c in range(C):
            assert np.sum(ds["test"].labels == c) == cfg.test_per_class

    def test_labeled_count_per_class(self, scene):
        cfg, _, ds = scene
        labels = ds["train"].labels
        for c in range(len(CLASS_NAMES)):
            assert np.sum(labels == c) == cfg.train_labeled_per_class
        assert np.sum(labels == UNLABELED) == (
            len(CLASS_NAMES) * cfg.train_unlabeled_per_class)

    def test_sunlit_classes_never_shadowed_when_labeled(self, scene):
        cfg, _, ds = scene
        f, labels = ds["train"].factors, ds["train"].labels
        for name in SUNLIT_ONLY_CLASSES:
            c = CLASS_NAMES.index(name)
            rows = labels == c
            direct = f[rows, 1] * f[rows, 2]
            assert direct.min() >= cfg.shadow_threshold - 1e-6

    def test_sheet_metal_single_training_irradiance(self, scene):
        _, _, ds = scene
        f, labels = ds["train"].factors, ds["train"].labels
        # labeled and unlabeled sheet-metal rows share one irradiance pair
        rows = f[:, 0].astype(int) == SINGLE_IRRADIANCE_CLASS
        pairs = {(round(float(a * b), 6), round(float(c * d), 6))
                 for a, b, c, d in zip(f[rows, 1], f[rows, 2], f[rows, 3], f[rows, 4])}
        assert len(pairs) == 1

    def test_tile_labeled_slope_restricted(self, scene):
        cfg, _, ds = scene
        f, labels = ds["train"].factors, ds["train"].labels
        rows = labels == TILE_CLASS
        assert f[rows, 2].min() >= cfg.tile_cos_theta_min - 1e-6

    def test_test_split_covers_shadowed_conditions(self, scene):
        cfg, _, ds = scene
        f = ds["test"].factors
        for name in SUNLIT_ONLY_CLASSES:
            c = CLASS_NAMES.index(name)
            rows = f[:, 0].astype(int) == c
            direct = f[rows, 1] * f[rows, 2]
            assert direct.min() < cfg.shadow_threshold  # out-of-training irradiance

    def test_determinism_byte_identical(self, scene, small_grid_mod, small_irr_mod):
        cfg, lib, ds = scene
        again = sv.generate_dataset(cfg, lib, small_irr_mod, small_grid_mod)
        for split in ("train", "val", "test"):
            np.testing.assert_array_equal(ds[split].spectra, again[split].spectra)
            np.testing.assert_array_equal(ds[split].factors, again[split].factors)
            np.testing.assert_array_equal(ds[split].labels, again[split].labels)

    def test_spectra_nonnegative_finite(self, scene):
        _, _, ds = scene
        for split in ds.values():
            assert np.all(np.isfinite(split.spectra))
            assert split.spectra.min() >= 0.0


class TestGenerateSpectrum:
    def test_noise_free_matches_physics(self, small_grid_mod, small_irr_mod):
        lib = sv.build_material_library(small_grid_mod, 0)
        f = sv.Factors(y=4, delta_dir=0.8, cos_theta=0.9, omega=0.9, p_omega=1.0,
                       alpha=1.0, eta1=0, eta2=0)
        x = sv.generate_spectrum(f, lib, small_irr_mod, 0.0,
                                 np.random.default_rng(0))
        from specvae.physics import correction_ratio
        expected = correction_ratio(0.8 * 0.9, 0.9 * 1.0, small_irr_mod) * lib.rho[4][0]
        np.testing.assert_allclose(x, np.maximum(expected, 0.0))

    def test_alpha_interpolates_subclasses(self, small_grid_mod, small_irr_mod):
        lib = sv.build_material_library(small_grid_mod, 0)
        mk = lambda alpha: sv.generate_spectrum(
            sv.Factors(y=0, delta_dir=1.0, cos_theta=0.866, omega=1.0, p_omega=1.0,
                       alpha=alpha, eta1=0, eta2=1),
            lib, small_irr_mod, 0.0, np.random.default_rng(0))
        mid = mk(0.5)
        np.testing.assert_allclose(mid, 0.5 * (mk(1.0) + mk(0.0)), atol=1e-12)

    def test_invalid_subclass_raises(self, small_grid_mod, small_irr_mod):
        lib = sv.build_material_library(small_grid_mod, 0)
        f = sv.Factors(y=1, delta_dir=1.0, cos_theta=0.9, omega=1.0, p_omega=1.0,
                       alpha=0.5, eta1=1, eta2=0)  # sheet metal has 1 subclass
        with pytest.raises(InvalidConfigError):
            sv.generate_spectrum(f, lib, small_irr_mod, 0.0, np.random.default_rng(0))


class TestContainers:
    def test_roundtrip(self, scene, tmp_path):
        _, _, ds = scene
        sv.save_container(ds["val"], tmp_path / "val")
        loaded = sv.load_container(tmp_path / "val")
        np.testing.assert_array_equal(loaded.spectra, ds["val"].spectra)
        np.testing.assert_array_equal(loaded.labels, ds["val"].labels)
        np.testing.assert_array_equal(loaded.factors, ds["val"].factors)
        assert loaded.split == "val"
        assert loaded.grid.segments == ds["val"].grid.segments

    def test_missing_array_rejected(self, scene, tmp_path):
        _, _, ds = scene
        sv.save_container(ds["val"], tmp_path / "val")
        (tmp_path / "val" / "labels.raw").unlink()
        import json
        manifest = json.loads((tmp_path / "val" / "manifest.json").read_text())
        del manifest["arrays"]["labels"]
        (tmp_path / "val" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ContainerError):
            sv.load_container(tmp_path / "val")

    def test_irradiance_roundtrip(self, small_irr_mod, tmp_path):
        save_irradiance(small_irr_mod, tmp_path / "irr")
        loaded = load_irradiance(tmp_path / "irr")
        np.testing.assert_allclose(loaded.I_dir_o, small_irr_mod.I_dir_o, atol=1e-7)
        assert loaded.cos_theta_o == pytest.approx(small_irr_mod.cos_theta_o)

    def test_label_factor_consistency_enforced(self, scene, small_grid_mod):
        _, _, ds = scene
        bad_labels = ds["val"].labels.copy()
        bad_labels[0] = (bad_labels[0] + 1) % len(CLASS_NAMES)
        with pytest.raises(ContainerError):
            sv.DatasetContainer(grid=small_grid_mod, spectra=ds["val"].spectra,
                                labels=bad_labels, factors=ds["val"].factors,
                                split="val")
