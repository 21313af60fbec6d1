"""Radiative-transfer forward model: the exact physics half of the decoder.

All functions are array-type polymorphic: they use only elementwise
arithmetic, so they accept numpy arrays or torch tensors (and stay
differentiable under torch autograd).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .core import IrradianceModel

#: Affine sky-term map: diffuse multiplier inferred from the direct-term latent.
G_OFFSET = 0.2


@dataclass(frozen=True)
class IrradianceState:
    """Scalar irradiance condition: direct term δ_dir·cosΘ and diffuse term Ω·p_ω."""

    dir_term: float
    dif_term: float

    def __post_init__(self):
        if not 0.0 <= self.dir_term <= 1.0:
            raise ValueError("dir_term must lie in [0, 1]")
        if self.dif_term < 0.0:
            raise ValueError("dif_term must be non-negative")


def g_empirical(z_p):
    """Empirical diffuse-term map g(z_P) = z_P + 0.2, deliberately unclamped."""
    return z_p + G_OFFSET


def correction_ratio(dir_term, dif_term, irr: IrradianceModel | None = None):
    """Per-band ratio of actual to flat-ground total irradiance.

    Callable as ``correction_ratio(state, irr)`` or
    ``correction_ratio(dir_term, dif_term, irr)``. Accepts scalars or batched
    tensors for the terms (broadcast against the band axis). Strictly positive
    whenever either term is; monotone increasing in both.
    """
    if isinstance(dir_term, IrradianceState):
        dir_term, dif_term, irr = dir_term.dir_term, dir_term.dif_term, dif_term
    i_dir, i_dif = irr.I_dir_o, irr.I_dif_o
    if isinstance(dir_term, torch.Tensor) or isinstance(dif_term, torch.Tensor):
        dtype = dir_term.dtype if isinstance(dir_term, torch.Tensor) else dif_term.dtype
        i_dir = torch.as_tensor(i_dir, dtype=dtype)
        i_dif = torch.as_tensor(i_dif, dtype=dtype)
    denom = irr.cos_theta_o * i_dir + i_dif
    return (dir_term * i_dir + dif_term * i_dif) / denom


def direct_irradiance(delta_dir, cos_theta, irr: IrradianceModel):
    """Direct per-band irradiance δ_dir·cosΘ·I_dir_o."""
    return delta_dir * cos_theta * irr.I_dir_o


def diffuse_irradiance(omega, p_omega, irr: IrradianceModel):
    """Diffuse per-band irradiance Ω·p_ω·I_dif_o."""
    return omega * p_omega * irr.I_dif_o


def forward_fP(rho_hat, z_p, irr: IrradianceModel):
    """Scale an estimated reflectance by the irradiance correction ratio.

    ``z_p`` drives both the direct term (identity) and the diffuse term (via
    ``g_empirical``); ``rho_hat`` may be a single spectrum or a batch.
    Differentiable in both arguments.
    """
    return correction_ratio(z_p, g_empirical(z_p), irr) * rho_hat
