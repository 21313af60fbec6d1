"""Hybrid physics/ML variational autoencoders for semi-supervised
hyperspectral classification, with a synthetic scene generator, an
importance-sampling inference rule, and F1/JEMMIG evaluation."""

from .core import (
    Factors,
    InvalidConfigError,
    IrradianceModel,
    MaterialLibrary,
    WavelengthGrid,
    default_grid,
    make_wavelength_grid,
    spectral_angle,
    synth_irradiance,
)
from .datagen import (
    DatasetContainer,
    SceneConfig,
    build_material_library,
    generate_dataset,
    generate_spectrum,
    load_container,
    save_container,
)
from .estimators import SpectraClassifier
from .inference import Prediction, latent_uncertainty, predict_argmax_py, predict_qy
from .metrics import FactorCodeTable, f1_per_class, jemmig
from .physics import IrradianceState, correction_ratio, forward_fP, g_empirical
from .training import Priors, TrainConfig, TrainingDivergedError, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
