"""Core spectral types: wavelength grids, irradiance models, material libraries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.floating]

GRID_START_UM = 0.4

#: Water-vapor absorption windows excluded from the default grid (µm).
DEFAULT_GAPS_UM = [(1.35, 1.45), (1.80, 1.95)]


class InvalidConfigError(ValueError):
    """Raised when a configuration violates its documented constraints."""


@dataclass(frozen=True)
class WavelengthGrid:
    """Band centers (µm) partitioned into maximal contiguous segments.

    Segments are (start, stop) index ranges over the band axis; bands within
    a segment are spectrally contiguous, gaps between segments correspond to
    excluded wavelength intervals.
    """

    wavelengths: FloatArray
    segments: tuple[tuple[int, int], ...]

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=np.float64)
        object.__setattr__(self, "wavelengths", w)
        if w.ndim != 1 or w.size == 0:
            raise InvalidConfigError("wavelengths must be a non-empty 1-D array")
        if not np.all(np.diff(w) > 0):
            raise InvalidConfigError("wavelengths must be strictly increasing")
        covered = []
        for start, stop in self.segments:
            if stop <= start:
                raise InvalidConfigError("empty segment")
            covered.extend(range(start, stop))
        if covered != list(range(w.size)):
            raise InvalidConfigError("segments must partition the band index set")

    @property
    def n_bands(self) -> int:
        return int(self.wavelengths.size)

    def segment_slices(self) -> list[slice]:
        return [slice(a, b) for a, b in self.segments]


@dataclass(frozen=True)
class IrradianceModel:
    """Reference direct/diffuse irradiance at flat-ground geometry.

    ``I_dir_o`` is the direct irradiance for a fully lit pixel with the sun at
    zenith; ``I_dif_o`` the diffuse irradiance for a full sky hemisphere;
    ``cos_theta_o`` the cosine of the solar zenith angle of the acquisition.
    """

    I_dir_o: FloatArray
    I_dif_o: FloatArray
    cos_theta_o: float

    def __post_init__(self):
        dir_o = np.asarray(self.I_dir_o, dtype=np.float64)
        dif_o = np.asarray(self.I_dif_o, dtype=np.float64)
        object.__setattr__(self, "I_dir_o", dir_o)
        object.__setattr__(self, "I_dif_o", dif_o)
        if dir_o.shape != dif_o.shape or dir_o.ndim != 1:
            raise InvalidConfigError("irradiance vectors must be 1-D with equal length")
        if not (np.all(dir_o > 0) and np.all(dif_o > 0)):
            raise InvalidConfigError("irradiance must be strictly positive")
        if not 0.0 < self.cos_theta_o <= 1.0:
            raise InvalidConfigError("cos_theta_o must lie in (0, 1]")

    @property
    def n_bands(self) -> int:
        return int(self.I_dir_o.size)

    def flat_ground_denominator(self) -> FloatArray:
        """Per-band total irradiance under the flat-ground hypotheses."""
        return self.cos_theta_o * self.I_dir_o + self.I_dif_o


@dataclass(frozen=True)
class MaterialLibrary:
    """Per-class subclass reflectance spectra, each in [0, 1]^B."""

    classes: tuple[str, ...]
    rho: tuple[tuple[FloatArray, ...], ...]

    def __post_init__(self):
        if len(self.classes) != len(self.rho):
            raise InvalidConfigError("one spectra tuple per class required")
        for name, spectra in zip(self.classes, self.rho):
            if len(spectra) < 1:
                raise InvalidConfigError(f"class {name!r} needs at least one subclass")
            for s in spectra:
                if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
                    raise InvalidConfigError(f"reflectance of {name!r} outside [0, 1]")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def n_subclasses(self, class_index: int) -> int:
        return len(self.rho[class_index])


@dataclass(frozen=True)
class Factors:
    """Ground-truth generative factors for one spectrum."""

    y: int
    delta_dir: float
    cos_theta: float
    omega: float
    p_omega: float
    alpha: float
    eta1: int
    eta2: int

    def __post_init__(self):
        for name in ("delta_dir", "cos_theta", "omega", "alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfigError(f"{name}={v} outside [0, 1]")
        if not 0.3 <= self.p_omega <= 1.3:
            raise InvalidConfigError(f"p_omega={self.p_omega} outside [0.3, 1.3]")

    def validate_for(self, lib: MaterialLibrary) -> None:
        n = lib.n_subclasses(self.y)
        if not (0 <= self.eta1 < n and 0 <= self.eta2 < n):
            raise InvalidConfigError(
                f"subclass indices ({self.eta1}, {self.eta2}) invalid for class {self.y}"
            )


def make_wavelength_grid(
    band_count: int,
    resolution_um: float,
    gaps: list[tuple[float, float]] | None = None,
) -> WavelengthGrid:
    """Build a uniform grid starting at 0.4 µm, dropping bands inside gaps.

    Gap intervals must be disjoint; bands whose centers fall inside a gap are
    removed and the remaining bands are grouped into contiguous segments.
    """
    if band_count < 1:
        raise InvalidConfigError("band_count must be >= 1")
    if resolution_um <= 0:
        raise InvalidConfigError("resolution_um must be positive")
    gaps = sorted(gaps or [])
    for (a0, b0), (a1, b1) in zip(gaps, gaps[1:]):
        if a1 < b0:
            raise InvalidConfigError(f"overlapping gaps ({a0}, {b0}) and ({a1}, {b1})")

    centers = GRID_START_UM + resolution_um * np.arange(band_count)
    keep = np.ones(band_count, dtype=bool)
    for lo, hi in gaps:
        keep &= ~((centers >= lo) & (centers <= hi))
    kept = centers[keep]
    if kept.size == 0:
        raise InvalidConfigError("gaps exclude every band")

    # Segment boundaries fall wherever dropped candidate bands interrupt a run.
    kept_idx = np.flatnonzero(keep)
    breaks = np.flatnonzero(np.diff(kept_idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    stops = np.concatenate((breaks + 1, [kept_idx.size]))
    segments = tuple((int(a), int(b)) for a, b in zip(starts, stops))
    return WavelengthGrid(wavelengths=kept, segments=segments)


def spectral_angle(a: FloatArray, b: FloatArray) -> float:
    """Angle (radians) between two spectra; scale-invariant shape distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("spectral_angle undefined for zero-norm spectra")
    cos = np.clip(a @ b / (na * nb), -1.0, 1.0)
    return float(np.arccos(cos))


def _planck_like(wavelengths_um: FloatArray, temp_k: float = 5800.0) -> FloatArray:
    lam_m = wavelengths_um * 1e-6
    hc_over_k = 0.0143877688  # m·K
    exponent = hc_over_k / (lam_m * temp_k)
    radiance = lam_m**-5 / np.expm1(exponent)
    return radiance / radiance.max()


def synth_irradiance(grid: WavelengthGrid, theta_o_deg: float) -> IrradianceModel:
    """Analytic sun + sky irradiance: solar-like direct, Rayleigh-like diffuse.

    The diffuse curve is scaled so the band-mean diffuse fraction
    I_dif_o / (cosΘ°·I_dir_o + I_dif_o) is 0.2, a typical clear-sky value.
    """
    if not 0.0 <= theta_o_deg <= 89.0:
        raise InvalidConfigError("theta_o_deg must lie in [0, 89]")
    cos_theta_o = float(np.cos(np.radians(theta_o_deg)))
    w = grid.wavelengths
    I_dir = _planck_like(w)
    dif_shape = (w / w[0]) ** -4.0

    def mean_dif_fraction(scale: float) -> float:
        dif = scale * dif_shape
        return float(np.mean(dif / (cos_theta_o * I_dir + dif)))

    lo, hi = 1e-9, 1e6
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_dif_fraction(mid) < 0.2:
            lo = mid
        else:
            hi = mid
    I_dif = 0.5 * (lo + hi) * dif_shape
    return IrradianceModel(I_dir_o=I_dir, I_dif_o=I_dif, cos_theta_o=cos_theta_o)


def default_grid(band_count: int = 300, resolution_um: float = 0.0065) -> WavelengthGrid:
    """Default 3-segment grid with the two water-vapor gaps."""
    return make_wavelength_grid(band_count, resolution_um, DEFAULT_GAPS_UM)
