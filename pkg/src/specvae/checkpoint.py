"""Model checkpoints in the named-array container convention."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .core import InvalidConfigError, IrradianceModel, WavelengthGrid
from .io import load_arrays, save_arrays
from .models import (
    DEFAULT_N_A,
    CNNClassifier,
    GaussianVAE,
    HybridPhysicsVAE,
    PhysicsGuidedVAE,
)

MODEL_NAMES = ("p3vae", "gaussian_vae", "physics_guided", "cnn")


def build_model(name: str, grid: WavelengthGrid, irr: IrradianceModel | None,
                n_classes: int, n_a: int = DEFAULT_N_A):
    if name == "p3vae":
        if irr is None:
            raise InvalidConfigError("p3vae requires an irradiance model")
        return HybridPhysicsVAE(grid, irr, n_classes, n_a)
    if name == "physics_guided":
        if irr is None:
            raise InvalidConfigError("physics_guided requires an irradiance model")
        return PhysicsGuidedVAE(grid, irr, n_classes, n_a)
    if name == "gaussian_vae":
        return GaussianVAE(grid, n_classes, n_a)
    if name == "cnn":
        return CNNClassifier(grid, n_classes)
    raise InvalidConfigError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")


def save_checkpoint(model, path: str | Path) -> None:
    arrays = {
        f"param.{name}": p.detach().numpy().astype(np.float32)
        for name, p in model.named_parameters()
    }
    meta = {
        "model": model.name,
        "n_classes": model.n_classes,
        "n_a": getattr(model, "n_a", getattr(model, "latent_dim", 1) - 1),
        "n_bands": model.grid.n_bands,
    }
    save_arrays(path, arrays, meta=meta)


def load_checkpoint(path: str | Path, grid: WavelengthGrid,
                    irr: IrradianceModel | None):
    arrays, meta = load_arrays(path)
    if meta["n_bands"] != grid.n_bands:
        raise InvalidConfigError(
            f"checkpoint has {meta['n_bands']} bands, grid has {grid.n_bands}"
        )
    model = build_model(meta["model"], grid, irr, int(meta["n_classes"]), int(meta["n_a"]))
    state = {name[len("param."):]: torch.as_tensor(arr)
             for name, arr in arrays.items() if name.startswith("param.")}
    expected = {name for name, _ in model.named_parameters()}
    if expected - state.keys():
        raise InvalidConfigError(f"checkpoint missing parameters: {sorted(expected - state.keys())}")
    model.load_state_dict(state, strict=False)  # buffers rebuilt from irr
    model.eval()
    return model
