"""Prediction rules: predictive distribution vs importance-sampled argmax.

The argmax rule scores each candidate class y by a Monte-Carlo estimate of an
unnormalized log p(x|y): latents are proposed from the posterior mixture
q(z|x) = Σ_y q(y|x) q(z|x,y) and re-weighted by log p(z) − log q(z|x) plus the
unnormalized log-likelihood. Scores are comparable only across classes for a
single x (the likelihood normalizer is dropped).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.distributions import Beta, Categorical, Dirichlet, Normal

from .core import InvalidConfigError
from .models import GaussianVAE, HybridPhysicsVAE
from .training import Priors, TrainConfig, nll_custom

DEFAULT_SAMPLES = 32


@dataclass
class Prediction:
    """Batched predictions with latent-uncertainty side information.

    class_index (n,), class_scores (n, C), z_p_mean/z_p_std/entropy (n,).
    z_P statistics are NaN for rules/models without a physics latent.
    """

    class_index: np.ndarray
    class_scores: np.ndarray
    z_p_mean: np.ndarray
    z_p_std: np.ndarray
    entropy: np.ndarray

    def __len__(self) -> int:
        return self.class_index.shape[0]

    @staticmethod
    def concatenate(parts: list["Prediction"]) -> "Prediction":
        return Prediction(*(np.concatenate([getattr(p, f) for p in parts])
                            for f in ("class_index", "class_scores",
                                      "z_p_mean", "z_p_std", "entropy")))


def _entropy_rows(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)


def logmeanexp(scores: torch.Tensor, dim: int) -> torch.Tensor:
    """Numerically stable log of the mean of exponentials (max-shifted)."""
    return torch.logsumexp(scores, dim=dim) - math.log(scores.shape[dim])


def predict_qy(model, x: np.ndarray) -> Prediction:
    """Classify with the approximate predictive distribution q(y|x)."""
    model.eval()
    xt = torch.as_tensor(np.atleast_2d(x), dtype=torch.float32)
    with torch.no_grad():
        probs = model.classify(xt).numpy()
    nan = np.full(probs.shape[0], np.nan)
    return Prediction(
        class_index=probs.argmax(axis=-1),
        class_scores=probs,
        z_p_mean=nan,
        z_p_std=nan.copy(),
        entropy=_entropy_rows(probs),
    )


def _mixture_log_q(z_p, z_a, beta_params, gamma_params, log_q_y):
    """log q(z|x) under the exact class mixture; shapes (S, N)."""
    comps = []
    for y in range(log_q_y.shape[1]):
        a, b = beta_params[y]
        log_q = Beta(a, b).log_prob(z_p) + Dirichlet(gamma_params[y]).log_prob(z_a)
        comps.append(log_q + log_q_y[:, y])
    return torch.logsumexp(torch.stack(comps, dim=-1), dim=-1)


def _argmax_py_hybrid(model: HybridPhysicsVAE, xt: torch.Tensor, n_samples: int,
                      priors: Priors, cfg: TrainConfig):
    n, C = xt.shape[0], model.n_classes
    q_y = model.classify(xt)
    log_q_y = torch.log(q_y.clamp_min(1e-12))

    beta_params, gamma_params = [], []
    for y in range(C):
        yv = torch.full((n,), y, dtype=torch.long)
        (a, b), gamma = model.encode(xt, yv)
        beta_params.append((a, b))
        gamma_params.append(gamma)

    y_star = Categorical(probs=q_y).sample((n_samples,))            # (S, N)
    a_all = torch.stack([p[0] for p in beta_params])                # (C, N)
    b_all = torch.stack([p[1] for p in beta_params])
    g_all = torch.stack(gamma_params)                               # (C, N, K)
    idx = torch.arange(n)
    a_s, b_s = a_all[y_star, idx], b_all[y_star, idx]               # (S, N)
    g_s = g_all[y_star, idx]                                        # (S, N, K)
    z_p = Beta(a_s, b_s).sample()
    z_a = Dirichlet(g_s).sample()

    log_p_z = (priors.z_p_prior().log_prob(z_p)
               + priors.z_a_prior().log_prob(z_a))                  # (S, N)
    log_q_z = _mixture_log_q(z_p, z_a, beta_params, gamma_params, log_q_y)

    scores = torch.empty(n_samples, n, C)
    flat_zp = z_p.reshape(-1)
    flat_za = z_a.reshape(-1, z_a.shape[-1])
    for y in range(C):
        yv = torch.full((flat_zp.shape[0],), y, dtype=torch.long)
        mu = model.decode(yv, flat_za, flat_zp).reshape(n_samples, n, -1)
        log_lik = -nll_custom(xt.expand(n_samples, n, -1).reshape(-1, xt.shape[1]),
                              mu.reshape(-1, mu.shape[-1]), cfg.sigma, cfg.lam)
        scores[:, :, y] = log_lik.reshape(n_samples, n)
    scores = scores + (log_p_z - log_q_z)[:, :, None]
    return logmeanexp(scores, dim=0), z_p, q_y


def _argmax_py_gaussian(model: GaussianVAE, xt: torch.Tensor, n_samples: int,
                        cfg: TrainConfig):
    n, C = xt.shape[0], model.n_classes
    q_y = model.classify(xt)
    log_q_y = torch.log(q_y.clamp_min(1e-12))

    params = [model.encode(xt, torch.full((n,), y, dtype=torch.long)) for y in range(C)]
    mean_all = torch.stack([p[0] for p in params])                  # (C, N, D)
    std_all = torch.stack([torch.exp(0.5 * p[1]) for p in params])

    y_star = Categorical(probs=q_y).sample((n_samples,))
    idx = torch.arange(n)
    mean_s, std_s = mean_all[y_star, idx], std_all[y_star, idx]     # (S, N, D)
    z = Normal(mean_s, std_s).sample()

    log_p_z = Normal(0.0, 1.0).log_prob(z).sum(-1)
    comps = [Normal(mean_all[y], std_all[y]).log_prob(z).sum(-1) + log_q_y[:, y]
             for y in range(C)]
    log_q_z = torch.logsumexp(torch.stack(comps, dim=-1), dim=-1)

    scores = torch.empty(n_samples, n, C)
    flat_z = z.reshape(-1, z.shape[-1])
    for y in range(C):
        yv = torch.full((flat_z.shape[0],), y, dtype=torch.long)
        mu = model.decode(yv, flat_z)
        log_lik = -nll_custom(xt.expand(n_samples, n, -1).reshape(-1, xt.shape[1]),
                              mu, cfg.sigma, cfg.lam)
        scores[:, :, y] = log_lik.reshape(n_samples, n)
    scores = scores + (log_p_z - log_q_z)[:, :, None]
    return logmeanexp(scores, dim=0), None, q_y


def predict_argmax_py(model, x: np.ndarray, n_samples: int = DEFAULT_SAMPLES,
                      priors: Priors | None = None, cfg: TrainConfig | None = None,
                      seed: int = 0, chunk: int = 256) -> Prediction:
    """Classify by argmax of the importance-sampled unnormalized p(y|x).

    Ties break toward the lowest class index. Deterministic given the seed
    (predictions are computed in fixed chunks with per-chunk streams).
    """
    if n_samples < 1:
        raise InvalidConfigError("n_samples must be >= 1")
    cfg = cfg or TrainConfig()
    model.eval()
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float32))
    out: list[Prediction] = []
    with torch.no_grad():
        for start in range(0, x2.shape[0], chunk):
            torch.manual_seed(hash((seed, start)) % (2**63))
            xt = torch.as_tensor(x2[start:start + chunk])
            if isinstance(model, GaussianVAE):
                scores, z_p, q_y = _argmax_py_gaussian(model, xt, n_samples, cfg)
            else:
                if priors is None:
                    priors = Priors(model.n_classes, model.n_a,
                                    model.physics.cos_theta_o)
                scores, z_p, q_y = _argmax_py_hybrid(model, xt, n_samples, priors, cfg)
            if not torch.isfinite(scores).any(dim=-1).all():
                raise ValueError("degenerate input: all class scores are -inf")
            scores_np = scores.numpy()
            nan = np.full(xt.shape[0], np.nan)
            out.append(Prediction(
                class_index=scores_np.argmax(axis=-1),
                class_scores=scores_np,
                z_p_mean=z_p.mean(0).numpy() if z_p is not None else nan,
                z_p_std=z_p.std(0, unbiased=False).numpy() if z_p is not None else nan,
                entropy=_entropy_rows(q_y.numpy()),
            ))
    return Prediction.concatenate(out)


def latent_uncertainty(model, x: np.ndarray, n_samples: int,
                       priors: Priors | None = None, cfg: TrainConfig | None = None,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Empirical z_P std (argmax-rule samples) and classifier entropy per row."""
    if n_samples < 2:
        raise InvalidConfigError("latent uncertainty needs n_samples >= 2")
    preds = predict_argmax_py(model, x, n_samples, priors=priors, cfg=cfg, seed=seed)
    return preds.z_p_std, preds.entropy


# --- Enumerable toy model (oracle surface for the importance-sampling rule) ---


@dataclass
class EnumerableToyModel:
    """Discrete-latent model on a small support, used to validate the rule.

    ``log_lik(x)`` must return an unnormalized (C, K) log-likelihood table.
    The proposal is the exact posterior mixture implied by q_y and q_z_given_y.
    """

    prior_z: np.ndarray            # (K,)
    q_y: np.ndarray                # (C,)
    q_z_given_y: np.ndarray        # (C, K)
    log_lik_table: np.ndarray      # (C, K), unnormalized log p̃(x|y,z)

    def __post_init__(self):
        if self.prior_z.size > 16 or self.q_y.size > 3:
            raise InvalidConfigError("toy model support is limited to K<=16, C<=3")


def toy_argmax_enumerated(toy: EnumerableToyModel) -> int:
    """Exact-enumeration proposal: score(y) = log Σ_z p(z)·p̃(x|y,z)."""
    scores = np.array([
        np.logaddexp.reduce(np.log(toy.prior_z) + toy.log_lik_table[y])
        for y in range(toy.q_y.size)
    ])
    return int(scores.argmax())


def toy_argmax_sampled(toy: EnumerableToyModel, n_samples: int,
                       rng: np.random.Generator) -> int:
    """Importance-sampled rule on the toy model, mirroring predict_argmax_py."""
    C, K = toy.log_lik_table.shape
    y_star = rng.choice(C, size=n_samples, p=toy.q_y)
    z_idx = np.array([rng.choice(K, p=toy.q_z_given_y[y]) for y in y_star])
    q_z = toy.q_y @ toy.q_z_given_y                       # exact mixture proposal
    log_w = np.log(toy.prior_z[z_idx]) - np.log(q_z[z_idx])
    scores = np.empty(C)
    for y in range(C):
        s = log_w + toy.log_lik_table[y, z_idx]
        scores[y] = np.logaddexp.reduce(s) - math.log(n_samples)
    return int(scores.argmax())


def predictions_to_csv(preds: Prediction, rule: str) -> str:
    lines = ["index,predicted_class,rule,z_P_mean,z_P_std,entropy"]
    for i in range(len(preds)):
        lines.append(
            f"{i},{preds.class_index[i]},{rule},{preds.z_p_mean[i]:.6f},"
            f"{preds.z_p_std[i]:.6f},{preds.entropy[i]:.6f}"
        )
    return "\n".join(lines) + "\n"
