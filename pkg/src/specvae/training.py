"""Priors, the MSE + spectral-angle likelihood, ELBO objectives, and training."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import digamma, gammaln
from torch.distributions import Beta, Dirichlet, kl_divergence

from .core import InvalidConfigError
from .models import CNNClassifier, GaussianVAE

PRIOR_EPS = 1e-6
ANGLE_COS_CLAMP = 1e-7


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class Priors:
    """p(y) uniform, p(z_P) = Beta(1, β°) with mean ≈ cosΘ°, p(z_A) uniform Dirichlet."""

    n_classes: int
    n_a: int
    cos_theta_o: float

    @property
    def beta_o(self) -> float:
        return (1.0 - self.cos_theta_o) / (self.cos_theta_o + PRIOR_EPS)

    def z_p_prior(self, dtype=None) -> Beta:
        kw = {"dtype": dtype} if dtype else {}
        return Beta(torch.tensor(1.0, **kw), torch.tensor(self.beta_o, **kw))

    def z_a_prior(self, dtype=None) -> Dirichlet:
        kw = {"dtype": dtype} if dtype else {}
        return Dirichlet(torch.ones(self.n_a, **kw))

    @property
    def log_p_y(self) -> float:
        return -math.log(self.n_classes)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    batch: int = 64
    kl_weight: float = 1e-4
    entropy_weight: float = 0.1
    ridge: float = 1e-2
    alpha_cls: float | None = None  # None: 0.1 * N_total / N_labeled
    sigma: float = 0.1
    lam: float = 20.0
    gradient_stopping: bool = True
    seed: int = 0

    def __post_init__(self):
        positives = (self.lr, self.epochs, self.batch, self.kl_weight,
                     self.entropy_weight, self.ridge, self.sigma, self.lam)
        if any(v <= 0 for v in positives):
            raise InvalidConfigError("TrainConfig fields must be positive")


def nll_custom(x: torch.Tensor, mu: torch.Tensor, sigma: float, lam: float) -> torch.Tensor:
    """Per-row negative log-likelihood: (1/σ²)·mean-band MSE + λ·spectral angle.

    The additive normalization constant is dropped; scores from this function
    are therefore comparable only across (y, z) candidates with the same x.
    """
    if x.ndim == 1:
        x, mu = x[None], mu[None]
    nx = torch.linalg.vector_norm(x, dim=-1)
    nmu = torch.linalg.vector_norm(mu, dim=-1)
    if torch.any(nx == 0) or torch.any(nmu == 0):
        raise ValueError("nll_custom undefined for zero-norm spectra")
    mse = torch.mean((x - mu) ** 2, dim=-1)
    cos = torch.clamp((x * mu).sum(-1) / (nx * nmu), -1.0 + ANGLE_COS_CLAMP, 1.0 - ANGLE_COS_CLAMP)
    return mse / sigma**2 + lam * torch.arccos(cos)


def _check_positive(*params) -> None:
    for p in params:
        if np.any(np.asarray(p) <= 0):
            raise ValueError("distribution parameters must be strictly positive")


def kl_beta(a_q: float, b_q: float, a_p: float, b_p: float) -> float:
    """Closed-form KL(Beta(a_q, b_q) || Beta(a_p, b_p))."""
    _check_positive(a_q, b_q, a_p, b_p)
    def log_beta_fn(a, b):
        return gammaln(a) + gammaln(b) - gammaln(a + b)
    return float(
        log_beta_fn(a_p, b_p) - log_beta_fn(a_q, b_q)
        + (a_q - a_p) * digamma(a_q)
        + (b_q - b_p) * digamma(b_q)
        + (a_p - a_q + b_p - b_q) * digamma(a_q + b_q)
    )


def kl_dirichlet(gamma_q, gamma_p) -> float:
    """Closed-form KL(Dir(gamma_q) || Dir(gamma_p))."""
    gq = np.asarray(gamma_q, dtype=np.float64)
    gp = np.asarray(gamma_p, dtype=np.float64)
    _check_positive(gq, gp)
    sq = gq.sum()
    return float(
        gammaln(sq) - gammaln(gp.sum())
        - np.sum(gammaln(gq)) + np.sum(gammaln(gp))
        + np.sum((gq - gp) * (digamma(gq) - digamma(sq)))
    )


def _supervised_parts(model, x: torch.Tensor, y: torch.Tensor, cfg: TrainConfig,
                      priors: Priors, detach_fa: bool = False):
    """Per-row (reconstruction log-likelihood, KL) for one latent sample."""
    if isinstance(model, GaussianVAE):
        mu, z, (mean, logvar) = model(x, y)
        kl = 0.5 * torch.sum(mean**2 + logvar.exp() - 1.0 - logvar, dim=1)
    else:
        mu, z_p, z_a, (q_zp, q_za) = model(x, y, detach_fa=detach_fa)
        dtype = x.dtype
        kl = kl_divergence(q_zp, priors.z_p_prior(dtype)) + kl_divergence(
            q_za, priors.z_a_prior(dtype)
        )
    recon = -nll_custom(x, mu, cfg.sigma, cfg.lam)
    return recon, kl


def elbo_supervised(model, x: torch.Tensor, y: torch.Tensor, cfg: TrainConfig,
                    priors: Priors, detach_fa: bool = False) -> torch.Tensor:
    """Per-row −L(x, y): single-sample reparameterized ELBO."""
    recon, kl = _supervised_parts(model, x, y, cfg, priors, detach_fa=detach_fa)
    return recon + priors.log_p_y - cfg.kl_weight * kl


def _minus_l_all_classes(model, x: torch.Tensor, cfg: TrainConfig, priors: Priors,
                         detach_fa: bool = False) -> torch.Tensor:
    """−L(x, y) for every candidate class at once; returns (N, C)."""
    dtype = x.dtype
    if isinstance(model, GaussianVAE):
        mean, logvar = model.encode_all_classes(x)          # (C, N, D)
        z = mean + torch.randn_like(mean) * torch.exp(0.5 * logvar)
        mu = model.decode_all_classes(z)                    # (C, N, B)
        kl = 0.5 * torch.sum(mean**2 + logvar.exp() - 1.0 - logvar, dim=-1)
    else:
        (a, b), gamma = model.encoder.all_classes(x)
        q_zp, q_za = Beta(a, b), Dirichlet(gamma)
        z_p, z_a = q_zp.rsample(), q_za.rsample()
        mu = model.decode_all_classes(z_a, z_p, detach_fa=detach_fa)
        kl = kl_divergence(q_zp, priors.z_p_prior(dtype)) + kl_divergence(
            q_za, priors.z_a_prior(dtype)
        )
    recon = -nll_custom(x[None].expand_as(mu), mu, cfg.sigma, cfg.lam)
    return (recon + priors.log_p_y - cfg.kl_weight * kl).T


def _unsupervised_parts(model, x: torch.Tensor, cfg: TrainConfig, priors: Priors,
                        detach_fa: bool = False):
    q_y = model.classify(x)
    minus_l = _minus_l_all_classes(model, x, cfg, priors, detach_fa=detach_fa)
    entropy = -(q_y * torch.log(q_y.clamp_min(1e-12))).sum(1)
    return (q_y * minus_l).sum(1) + cfg.entropy_weight * entropy, entropy


def elbo_unsupervised(model, x: torch.Tensor, cfg: TrainConfig, priors: Priors,
                      detach_fa: bool = False) -> torch.Tensor:
    """Per-row −U(x): exact mixture over all classes plus weighted entropy."""
    return _unsupervised_parts(model, x, cfg, priors, detach_fa=detach_fa)[0]


def ridge_penalty(model) -> torch.Tensor:
    """Squared norm of classifier and encoder weights (decoder excluded)."""
    total = None
    for name, p in model.named_parameters():
        if name.startswith(("decoder.", "dec.")):
            continue
        sq = (p**2).sum()
        total = sq if total is None else total + sq
    return total


def resolve_alpha_cls(cfg: TrainConfig, n_labeled: int, n_unlabeled: int) -> float:
    if cfg.alpha_cls is not None:
        return cfg.alpha_cls
    return 0.1 * (n_labeled + n_unlabeled) / max(n_labeled, 1)


def total_objective(model, labeled: tuple[torch.Tensor, torch.Tensor] | None,
                    unlabeled: torch.Tensor | None, cfg: TrainConfig, priors: Priors,
                    alpha_cls: float) -> dict[str, torch.Tensor]:
    """J over one minibatch pair; returns the objective and its components.

    Side keys ``kl`` and ``entropy`` are detached per-row means for tracing.
    """
    zero = torch.tensor(0.0)
    parts = {"labeled": zero, "unlabeled": zero, "ridge": zero,
             "kl": zero, "entropy": zero}
    if labeled is not None and labeled[0].shape[0] > 0:
        x_l, y_l = labeled
        recon, kl = _supervised_parts(model, x_l, y_l, cfg, priors)
        minus_l = recon + priors.log_p_y - cfg.kl_weight * kl
        log_q = torch.log(model.classify(x_l).clamp_min(1e-12))
        cls = log_q[torch.arange(y_l.shape[0]), y_l]
        parts["labeled"] = (-minus_l - alpha_cls * cls).sum()
        parts["kl"] = kl.mean().detach()
    if unlabeled is not None and unlabeled.shape[0] > 0:
        minus_u, entropy = _unsupervised_parts(model, unlabeled, cfg, priors,
                                               detach_fa=cfg.gradient_stopping)
        parts["unlabeled"] = (-minus_u).sum()
        parts["entropy"] = entropy.mean().detach()
    parts["ridge"] = cfg.ridge * ridge_penalty(model)
    parts["objective"] = parts["labeled"] + parts["unlabeled"] + parts["ridge"]
    return parts


def _batches(n: int, batch: int, generator: torch.Generator):
    perm = torch.randperm(n, generator=generator)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def _cycling_batches(n: int, batch: int, generator: torch.Generator):
    """Endless stream of shuffled minibatch index tensors, reshuffling on wrap."""
    while True:
        yield from _batches(n, batch, generator)


def train(model, spectra: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
          priors: Priors | None = None) -> list[dict[str, float]]:
    """Optimize a model on a semi-supervised dataset (-1 labels = unlabeled).

    Returns the per-epoch loss trace. Deterministic given cfg.seed. Raises
    TrainingDivergedError when the loss goes non-finite (some weight
    initializations of the hybrid model are known to diverge).
    """
    torch.manual_seed(cfg.seed)
    x_all = torch.as_tensor(spectra, dtype=torch.float32)
    y_all = torch.as_tensor(labels, dtype=torch.long)
    labeled_mask = y_all >= 0
    x_l, y_l = x_all[labeled_mask], y_all[labeled_mask]
    x_u = x_all[~labeled_mask]

    if isinstance(model, CNNClassifier):
        return _train_classifier(model, x_l, y_l, cfg)

    if priors is None:
        raise InvalidConfigError("semi-supervised training requires priors")
    alpha_cls = resolve_alpha_cls(cfg, x_l.shape[0], x_u.shape[0])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    # One epoch is a pass over the labeled set; the unlabeled stream cycles
    # persistently across epochs (reshuffled on each wrap), so every unlabeled
    # row is still visited while keeping the step count proportional to the
    # labeled set size.
    unl_stream = _cycling_batches(x_u.shape[0], cfg.batch, gen) if x_u.shape[0] else None
    trace = []
    for epoch in range(cfg.epochs):
        model.train()
        lab_batches = _batches(x_l.shape[0], cfg.batch, gen) if x_l.shape[0] else []
        if lab_batches:
            n_steps = len(lab_batches)
        elif unl_stream is not None:
            n_steps = -(-x_u.shape[0] // cfg.batch)
        else:
            n_steps = 1
        sums = {"labeled": 0.0, "unlabeled": 0.0, "kl": 0.0, "entropy": 0.0, "ridge": 0.0}
        for step in range(n_steps):
            lab = None
            if lab_batches:
                idx = lab_batches[step]
                lab = (x_l[idx], y_l[idx])
            unl = x_u[next(unl_stream)] if unl_stream is not None else None
            parts = total_objective(model, lab, unl, cfg, priors, alpha_cls)
            loss = parts["objective"]
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step} (seed {cfg.seed})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            for key in sums:
                sums[key] += float(parts[key].detach() if hasattr(parts[key], "detach") else parts[key])
        trace.append({"epoch": epoch, **{k: v / n_steps for k, v in sums.items()}})
    model.eval()
    return trace


def _train_classifier(model: CNNClassifier, x_l: torch.Tensor, y_l: torch.Tensor,
                      cfg: TrainConfig) -> list[dict[str, float]]:
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    trace = []
    for epoch in range(cfg.epochs):
        model.train()
        total = 0.0
        batches = _batches(x_l.shape[0], cfg.batch, gen)
        for idx in batches:
            logits = model.classifier.logits(x_l[idx])
            loss = F.cross_entropy(logits, y_l[idx], reduction="sum")
            loss = loss + cfg.ridge * ridge_penalty(model)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch} (seed {cfg.seed})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
        trace.append({"epoch": epoch, "labeled": total / max(len(batches), 1),
                      "unlabeled": 0.0, "kl": 0.0, "entropy": 0.0, "ridge": 0.0})
    model.eval()
    return trace


TRACE_COLUMNS = ("epoch", "labeled", "unlabeled", "kl", "entropy", "ridge")


def trace_to_csv(trace: list[dict[str, float]]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for row in trace:
        lines.append(",".join(
            str(row["epoch"]) if c == "epoch" else f"{row[c]:.6f}" for c in TRACE_COLUMNS
        ))
    return "\n".join(lines) + "\n"
