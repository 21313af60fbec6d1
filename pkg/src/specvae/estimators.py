"""Scikit-learn style estimator wrappers around the VAE models.

`SpectraClassifier` exposes the semi-supervised models through the familiar
``fit`` / ``predict`` / ``predict_proba`` interface. Rows labeled ``-1`` in
``y`` are treated as unlabeled and contribute through the unsupervised part
of the objective, mirroring scikit-learn's semi-supervised convention.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import MODEL_NAMES, build_model
from .core import InvalidConfigError, IrradianceModel, WavelengthGrid, default_grid, synth_irradiance
from .inference import DEFAULT_SAMPLES, predict_argmax_py, predict_qy
from .models import DEFAULT_N_A
from .training import Priors, TrainConfig, train

UNLABELED = -1


class SpectraClassifier(BaseEstimator, ClassifierMixin):
    """Semi-supervised spectra classifier with a choice of generative model.

    Parameters
    ----------
    model : one of "p3vae", "gaussian_vae", "physics_guided", "cnn".
    rule : "qy" uses the approximate predictive distribution q(y|x);
        "argmax" uses the importance-sampling estimate of argmax_y p(y|x)
        (ignored by the purely discriminative "cnn" model).
    grid, irradiance : the wavelength grid and at-sensor irradiance model;
        defaults are built when omitted.
    n_samples : importance samples per row for the "argmax" rule.
    epochs, lr, batch, kl_weight, entropy_weight, ridge, sigma, lam,
    gradient_stopping, seed : forwarded to the training configuration.
    """

    def __init__(self, model: str = "p3vae", rule: str = "argmax",
                 grid: WavelengthGrid | None = None,
                 irradiance: IrradianceModel | None = None,
                 n_a: int = DEFAULT_N_A, n_samples: int = DEFAULT_SAMPLES,
                 epochs: int = 30, lr: float = 1e-4, batch: int = 64,
                 kl_weight: float = 1e-4, entropy_weight: float = 0.1,
                 ridge: float = 1e-2, sigma: float = 0.1, lam: float = 1.0,
                 gradient_stopping: bool = True, seed: int = 0):
        self.model = model
        self.rule = rule
        self.grid = grid
        self.irradiance = irradiance
        self.n_a = n_a
        self.n_samples = n_samples
        self.epochs = epochs
        self.lr = lr
        self.batch = batch
        self.kl_weight = kl_weight
        self.entropy_weight = entropy_weight
        self.ridge = ridge
        self.sigma = sigma
        self.lam = lam
        self.gradient_stopping = gradient_stopping
        self.seed = seed

    def _resolve_scene(self):
        grid = self.grid if self.grid is not None else default_grid()
        irr = self.irradiance if self.irradiance is not None else synth_irradiance(grid, 30.0)
        return grid, irr

    def fit(self, X, y):
        """Fit on spectra X (n, B); y entries of -1 mark unlabeled rows."""
        if self.model not in MODEL_NAMES:
            raise InvalidConfigError(f"unknown model {self.model!r}; choose from {MODEL_NAMES}")
        if self.rule not in ("qy", "argmax"):
            raise InvalidConfigError(f"unknown rule {self.rule!r}; choose 'qy' or 'argmax'")
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise InvalidConfigError("X must be (n, B) with one label per row")
        labeled = y[y != UNLABELED]
        if labeled.size == 0:
            raise InvalidConfigError("at least one labeled row is required")
        self.classes_ = np.unique(labeled)
        n_classes = int(self.classes_.max()) + 1
        grid, irr = self._resolve_scene()
        if X.shape[1] != grid.n_bands:
            raise InvalidConfigError(
                f"X has {X.shape[1]} bands but the grid has {grid.n_bands}")
        cfg = TrainConfig(lr=self.lr, epochs=self.epochs, batch=self.batch,
                          kl_weight=self.kl_weight, entropy_weight=self.entropy_weight,
                          ridge=self.ridge, sigma=self.sigma, lam=self.lam,
                          gradient_stopping=self.gradient_stopping, seed=self.seed)
        self.priors_ = Priors(n_classes, self.n_a, irr.cos_theta_o)
        torch.manual_seed(self.seed)  # weight init must not depend on prior RNG use
        self.model_ = build_model(self.model, grid, irr, n_classes, self.n_a)
        self.trace_ = train(self.model_, X, y, cfg, self.priors_)
        self.cfg_ = cfg
        self.n_features_in_ = X.shape[1]
        return self

    def _as_tensor(self, X) -> torch.Tensor:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise InvalidConfigError(f"X must be (n, {self.n_features_in_})")
        return torch.as_tensor(X)

    def _predict_full(self, X):
        check_is_fitted(self, "model_")
        xt = self._as_tensor(X)
        if self.rule == "argmax" and self.model != "cnn":
            return predict_argmax_py(self.model_, xt, n_samples=self.n_samples,
                                     priors=self.priors_, cfg=self.cfg_, seed=self.seed)
        return predict_qy(self.model_, xt)

    def predict(self, X):
        return self._predict_full(X).class_index

    def predict_proba(self, X):
        """Normalized class scores under the configured decision rule."""
        scores = self._predict_full(X).class_scores
        if self.rule == "argmax" and self.model != "cnn":
            scores = torch.softmax(torch.as_tensor(scores), dim=-1).numpy()
        return scores

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))
