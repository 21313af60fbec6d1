"""Factor-based synthetic spectra generation and annotation-scarcity splits."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import (
    Factors,
    FloatArray,
    InvalidConfigError,
    IrradianceModel,
    MaterialLibrary,
    WavelengthGrid,
)
from .io import ContainerError, load_arrays, save_arrays
from .physics import correction_ratio

CLASS_NAMES = ("vegetation", "sheet_metal", "sandy_loam", "tile", "asphalt")
SUBCLASS_COUNTS = {"vegetation": 3, "sheet_metal": 1, "sandy_loam": 2, "tile": 2, "asphalt": 2}

#: Classes whose labeled training samples never appear in the shadows.
SUNLIT_ONLY_CLASSES = ("vegetation", "sandy_loam", "asphalt")

#: Index of the class observed under a single irradiance condition at train time.
SINGLE_IRRADIANCE_CLASS = CLASS_NAMES.index("sheet_metal")
TILE_CLASS = CLASS_NAMES.index("tile")

FACTOR_NAMES = ("y", "delta_dir", "cos_theta", "omega", "p_omega", "alpha", "eta1", "eta2")

UNLABELED = -1


@dataclass
class SceneConfig:
    """Configuration of the synthetic scene and its annotation-scarcity splits."""

    seed: int = 0
    noise_sigma: float = 0.01
    theta_o_deg: float = 30.0
    train_labeled_per_class: int = 600
    train_unlabeled_per_class: int = 3000
    val_per_class: int = 200
    test_per_class: int = 500
    shadow_threshold: float = 0.3
    tile_cos_theta_min: float = 0.55
    cos_theta_min: float = 0.1

    def __post_init__(self):
        counts = (
            self.train_labeled_per_class,
            self.train_unlabeled_per_class,
            self.val_per_class,
            self.test_per_class,
        )
        if any(c <= 0 for c in counts):
            raise InvalidConfigError("split counts must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be non-negative")
        if not 0.0 <= self.shadow_threshold < 1.0:
            raise InvalidConfigError(
                "shadow_threshold must lie in [0, 1); >= 1 leaves no admissible sunlit factors"
            )
        if not 0.0 <= self.tile_cos_theta_min < 1.0:
            raise InvalidConfigError("tile_cos_theta_min must lie in [0, 1)")


@dataclass
class DatasetContainer:
    """In-memory dataset bundle; -1 labels mark unlabeled rows."""

    grid: WavelengthGrid
    spectra: np.ndarray
    labels: np.ndarray
    factors: np.ndarray
    split: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.spectra.shape[0]
        if self.labels.shape != (n,) or self.factors.shape != (n, len(FACTOR_NAMES)):
            raise ContainerError("row counts of spectra, labels and factors disagree")
        if self.spectra.shape[1] != self.grid.n_bands:
            raise ContainerError(
                f"spectra have {self.spectra.shape[1]} bands, grid has {self.grid.n_bands}"
            )
        if not np.all(np.isfinite(self.spectra)) or np.any(self.spectra < 0):
            raise ContainerError("spectra must be finite and non-negative")
        labeled = self.labels != UNLABELED
        if not np.array_equal(self.labels[labeled], self.factors[labeled, 0].astype(np.int64)):
            raise ContainerError("labeled rows must agree with the class factor")

    @property
    def n_rows(self) -> int:
        return int(self.spectra.shape[0])


def _smooth_bump(w: FloatArray, center: float, width: float) -> FloatArray:
    return np.exp(-0.5 * ((w - center) / width) ** 2)


def _edge(w: FloatArray, center: float, width: float) -> FloatArray:
    return 1.0 / (1.0 + np.exp(-(w - center) / width))


def build_material_library(grid: WavelengthGrid, seed: int = 0) -> MaterialLibrary:
    """Parametric reflectance spectra for the five scene materials.

    Shapes follow well-known spectral features: vegetation red edge near
    0.7 µm, clay absorption dip at 2.2 µm for tile and sandy loam, low flat
    asphalt, bright gently sloped sheet metal. Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    w = grid.wavelengths
    spectra: list[tuple[FloatArray, ...]] = []

    vegetation = []
    for nir, red_edge, green in ((0.50, 0.715, 0.10), (0.38, 0.705, 0.14), (0.44, 0.725, 0.08)):
        base = 0.04 + green * _smooth_bump(w, 0.55, 0.04)
        base = base + (nir - 0.04) * _edge(w, red_edge, 0.012)
        base = base * (1.0 - 0.45 * _edge(w, 1.3, 0.2))  # leaf water decline in SWIR
        base = base - 0.06 * _smooth_bump(w, 1.45, 0.05) - 0.05 * _smooth_bump(w, 1.94, 0.06)
        vegetation.append(base + rng.normal(0.0, 0.002, w.size))
    spectra.append(tuple(np.clip(v, 0.0, 1.0) for v in vegetation))

    metal = 0.62 - 0.10 * (w - w[0]) / (w[-1] - w[0]) + rng.normal(0.0, 0.002, w.size)
    spectra.append((np.clip(metal, 0.0, 1.0),))

    loams = []
    for level in (0.42, 0.34):
        base = 0.10 + (level - 0.10) * _edge(w, 0.9, 0.25)
        base = base - 0.08 * _smooth_bump(w, 2.2, 0.04)  # clay absorption
        loams.append(np.clip(base + rng.normal(0.0, 0.002, w.size), 0.0, 1.0))
    spectra.append(tuple(loams))

    tiles = []
    for level, iron in ((0.48, 0.20), (0.38, 0.14)):
        base = 0.08 + iron * _edge(w, 0.58, 0.05) + (level - 0.25) * _edge(w, 1.0, 0.3)
        base = base - 0.10 * _smooth_bump(w, 2.2, 0.045)  # clay absorption
        tiles.append(np.clip(base + rng.normal(0.0, 0.002, w.size), 0.0, 1.0))
    spectra.append(tuple(tiles))

    asphalts = []
    for level, slope in ((0.08, 0.04), (0.12, 0.06)):
        base = level + slope * (w - w[0]) / (w[-1] - w[0])
        asphalts.append(np.clip(base + rng.normal(0.0, 0.002, w.size), 0.0, 1.0))
    spectra.append(tuple(asphalts))

    return MaterialLibrary(classes=CLASS_NAMES, rho=tuple(spectra))


def generate_spectrum(
    f: Factors,
    lib: MaterialLibrary,
    irr: IrradianceModel,
    noise_sigma: float,
    rng: np.random.Generator,
) -> FloatArray:
    """Mix two subclass spectra, scale by the irradiance ratio, add noise."""
    f.validate_for(lib)
    rho_mix = f.alpha * lib.rho[f.y][f.eta1] + (1.0 - f.alpha) * lib.rho[f.y][f.eta2]
    ratio = correction_ratio(f.delta_dir * f.cos_theta, f.omega * f.p_omega, irr)
    x = ratio * rho_mix
    if noise_sigma > 0:
        x = x + rng.normal(0.0, noise_sigma, x.size)
    return np.maximum(x, 0.0)


def _row_rng(seed: int, split_tag: int, row: int) -> np.random.Generator:
    # One independent stream per row so parallel and serial generation agree.
    return np.random.default_rng(np.random.SeedSequence([seed, split_tag, row]))


def _sample_factors(
    rng: np.random.Generator, y: int, lib: MaterialLibrary, cfg: SceneConfig, role: str
) -> Factors:
    """Draw factors for one row according to its split role.

    Roles: ``labeled`` applies the annotation-scarcity constraints,
    ``unlabeled`` and ``full`` draw from the full ranges (sheet metal stays at
    its single training irradiance for train-time roles).
    """
    eta1 = int(rng.integers(lib.n_subclasses(y)))
    eta2 = int(rng.integers(lib.n_subclasses(y)))
    alpha = float(rng.uniform())

    fixed_irradiance = Factors(
        y=y, delta_dir=1.0, cos_theta=0.866, omega=1.0, p_omega=1.0,
        alpha=alpha, eta1=eta1, eta2=eta2,
    )
    if role in ("labeled", "unlabeled") and y == SINGLE_IRRADIANCE_CLASS:
        return fixed_irradiance

    for _ in range(1000):
        delta_dir = float(rng.uniform())
        cos_theta = float(rng.uniform(cfg.cos_theta_min, 1.0))
        omega = float(rng.uniform(0.3, 1.0))
        p_omega = float(rng.uniform(0.3, 1.3))
        if role == "labeled":
            if CLASS_NAMES[y] in SUNLIT_ONLY_CLASSES and delta_dir * cos_theta < cfg.shadow_threshold:
                continue
            if y == TILE_CLASS and cos_theta < cfg.tile_cos_theta_min:
                continue
        return Factors(
            y=y, delta_dir=delta_dir, cos_theta=cos_theta, omega=omega,
            p_omega=p_omega, alpha=alpha, eta1=eta1, eta2=eta2,
        )
    raise InvalidConfigError(
        f"no admissible factors for class {CLASS_NAMES[y]!r} under the split constraints"
    )


def _build_split(
    cfg: SceneConfig,
    lib: MaterialLibrary,
    irr: IrradianceModel,
    grid: WavelengthGrid,
    split: str,
    split_tag: int,
    per_class_roles: list[tuple[int, str, bool]],
) -> DatasetContainer:
    rows_factors, rows_x, rows_label = [], [], []
    row = 0
    for y, role, labeled in per_class_roles:
        rng = _row_rng(cfg.seed, split_tag, row)
        f = _sample_factors(rng, y, lib, cfg, role)
        x = generate_spectrum(f, lib, irr, cfg.noise_sigma, rng)
        rows_factors.append(
            [f.y, f.delta_dir, f.cos_theta, f.omega, f.p_omega, f.alpha, f.eta1, f.eta2]
        )
        rows_x.append(x)
        rows_label.append(f.y if labeled else UNLABELED)
        row += 1
    return DatasetContainer(
        grid=grid,
        spectra=np.asarray(rows_x, dtype=np.float32),
        labels=np.asarray(rows_label, dtype=np.int64),
        factors=np.asarray(rows_factors, dtype=np.float32),
        split=split,
        meta={"seed": cfg.seed, "config": asdict(cfg)},
    )


def generate_dataset(
    cfg: SceneConfig,
    lib: MaterialLibrary,
    irr: IrradianceModel,
    grid: WavelengthGrid,
) -> dict[str, DatasetContainer]:
    """Generate train/val/test splits with the annotation-scarcity structure.

    The labeled training subset excludes shadowed vegetation, sandy loam and
    asphalt, restricts tile slopes, and pins sheet metal to one irradiance
    condition (its unlabeled rows share that condition, matching a scene where
    all sheet-metal pixels sit on identical roofs). Validation and test rows
    cover the full factor ranges, including irradiance never seen labeled.
    """
    C = len(CLASS_NAMES)
    train_roles = [(y, "labeled", True) for y in range(C) for _ in range(cfg.train_labeled_per_class)]
    train_roles += [
        (y, "unlabeled", False) for y in range(C) for _ in range(cfg.train_unlabeled_per_class)
    ]
    val_roles = [(y, "full", True) for y in range(C) for _ in range(cfg.val_per_class)]
    test_roles = [(y, "full", True) for y in range(C) for _ in range(cfg.test_per_class)]
    return {
        "train": _build_split(cfg, lib, irr, grid, "train", 0, train_roles),
        "val": _build_split(cfg, lib, irr, grid, "val", 1, val_roles),
        "test": _build_split(cfg, lib, irr, grid, "test", 2, test_roles),
    }


def save_container(ds: DatasetContainer, path: str | Path) -> None:
    seg = np.asarray(ds.grid.segments, dtype=np.int32)
    save_arrays(
        path,
        {
            "wavelengths": ds.grid.wavelengths.astype(np.float32),
            "segments": seg,
            "spectra": ds.spectra.astype(np.float32),
            "labels": ds.labels.astype(np.int64),
            "factors": ds.factors.astype(np.float32),
        },
        meta={"split": ds.split, **ds.meta},
    )


def load_container(path: str | Path) -> DatasetContainer:
    arrays, meta = load_arrays(path)
    for key in ("wavelengths", "segments", "spectra", "labels", "factors"):
        if key not in arrays:
            raise ContainerError(f"container missing array {key!r}")
    grid = WavelengthGrid(
        wavelengths=arrays["wavelengths"].astype(np.float64),
        segments=tuple((int(a), int(b)) for a, b in arrays["segments"]),
    )
    meta = dict(meta)
    split = meta.pop("split", "unknown")
    return DatasetContainer(
        grid=grid,
        spectra=arrays["spectra"],
        labels=arrays["labels"],
        factors=arrays["factors"],
        split=split,
        meta=meta,
    )


def save_irradiance(irr: IrradianceModel, path: str | Path) -> None:
    save_arrays(
        path,
        {"I_dir_o": irr.I_dir_o.astype(np.float32), "I_dif_o": irr.I_dif_o.astype(np.float32)},
        meta={"cos_theta_o": irr.cos_theta_o},
    )


def load_irradiance(path: str | Path) -> IrradianceModel:
    arrays, meta = load_arrays(path)
    return IrradianceModel(
        I_dir_o=arrays["I_dir_o"].astype(np.float64),
        I_dif_o=arrays["I_dif_o"].astype(np.float64),
        cos_theta_o=float(meta["cos_theta_o"]),
    )
