"""Network components and the four model assemblies.

All models operate on batches of spectra shaped (N, B) on a fixed wavelength
grid. Latent conventions: ``z_A`` lives on the (n_A - 1)-simplex with a
Dirichlet posterior, ``z_P`` in [0, 1] with a Beta posterior; both posteriors
are reparameterized with implicit (pathwise) gradients via
``torch.distributions.rsample``.

The semi-supervised objective mixes the supervised ELBO over every candidate
class, so the encoders and the decoder expose vectorized all-classes paths
(class-independent features are computed once and the per-class heads are
broadcast over a leading class axis).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.distributions import Beta, Dirichlet

from .core import IrradianceModel, WavelengthGrid
from .physics import G_OFFSET

HIDDEN = 256
CONV_CHANNELS = 4
ENCODER_KERNELS = (11, 9, 7, 5)
DEFAULT_N_A = 4
DROPOUT_RATE = 0.2
POSITIVE_EPS = 1e-4


def one_hot(y: torch.Tensor, n_classes: int) -> torch.Tensor:
    return F.one_hot(y.long(), n_classes).to(torch.get_default_dtype())


class SameConv1d(nn.Conv1d):
    """Conv1d with explicit 'same' zero padding (supports even kernels)."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        k = self.kernel_size[0]
        left = (k - 1) // 2
        return super().forward(F.pad(x, (left, k - 1 - left)))


class SegmentedSpectralConv(nn.Module):
    """Two same-padded spectral convolutions per contiguous segment, with a
    skip connection and max-pooling, concatenated across segments."""

    def __init__(self, grid: WavelengthGrid):
        super().__init__()
        self.slices = grid.segment_slices()
        conv1, conv2 = [], []
        out_len = 0
        for a, b in grid.segments:
            k = max((b - a) // 5, 1)
            conv1.append(SameConv1d(1, CONV_CHANNELS, k))
            conv2.append(SameConv1d(CONV_CHANNELS, CONV_CHANNELS, k))
            out_len += ((b - a) // 2) * CONV_CHANNELS
        self.conv1 = nn.ModuleList(conv1)
        self.conv2 = nn.ModuleList(conv2)
        self.out_features = out_len

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        parts = []
        for sl, c1, c2 in zip(self.slices, self.conv1, self.conv2):
            h = x[:, None, sl]
            h1 = F.relu(c1(h))
            h2 = F.relu(c2(h1)) + h1  # skip connection
            parts.append(F.max_pool1d(h2, 2).flatten(1))
        return torch.cat(parts, dim=1)


class SpectralClassifier(nn.Module):
    """CNN over segmented spectra; also serves as q(y|x) in the VAEs."""

    def __init__(self, grid: WavelengthGrid, n_classes: int, dropout: float = DROPOUT_RATE):
        super().__init__()
        self.features = SegmentedSpectralConv(grid)
        self.head = nn.Sequential(
            nn.Linear(self.features.out_features, HIDDEN),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(HIDDEN, n_classes),
        )
        self.n_classes = n_classes

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Class probabilities (softmax over C)."""
        return F.softmax(self.logits(x), dim=-1)


class ConvFeatures(nn.Module):
    """Pooled convolutional feature stack shared by the encoders."""

    def __init__(self, n_bands: int):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch, length = 1, n_bands
        for k in ENCODER_KERNELS:
            layers += [SameConv1d(in_ch, CONV_CHANNELS, k), nn.ReLU(), nn.MaxPool1d(2)]
            in_ch = CONV_CHANNELS
            length //= 2
        self.net = nn.Sequential(*layers)
        self.out_features = CONV_CHANNELS * length

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x[:, None, :]).flatten(1)


class _AffineClassHead(nn.Module):
    """W_x·feats + W_y·onehot(y): a single affine map of the input and class."""

    def __init__(self, in_features: int, n_classes: int, out_features: int):
        super().__init__()
        self.in_x = nn.Linear(in_features, out_features)
        self.in_y = nn.Linear(n_classes, out_features, bias=False)
        self.n_classes = n_classes

    def forward(self, feats: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.in_x(feats) + self.in_y(one_hot(y, self.n_classes))

    def all_classes(self, feats: torch.Tensor) -> torch.Tensor:
        """(C, N, out) evaluation for every candidate class."""
        return self.in_x(feats)[None] + self.in_y.weight.T[:, None]


class _ClassConditionedHead(nn.Module):
    """relu(W_x·feats + W_y·onehot(y)) followed by a dense stack, with a
    broadcastable all-classes evaluation."""

    def __init__(self, in_features: int, n_classes: int, out_features: int,
                 extra_hidden: bool = False):
        super().__init__()
        self.in_x = nn.Linear(in_features, HIDDEN)
        self.in_y = nn.Linear(n_classes, HIDDEN, bias=False)
        self.hidden = nn.Sequential(nn.Linear(HIDDEN, HIDDEN), nn.ReLU()) if extra_hidden else None
        self.out = nn.Linear(HIDDEN, out_features)
        self.n_classes = n_classes

    def _tail(self, h: torch.Tensor) -> torch.Tensor:
        h = F.relu(h)
        if self.hidden is not None:
            h = self.hidden(h)
        return self.out(h)

    def forward(self, feats: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self._tail(self.in_x(feats) + self.in_y(one_hot(y, self.n_classes)))

    def all_classes(self, feats: torch.Tensor) -> torch.Tensor:
        """(C, N, out) evaluation for every candidate class."""
        hx = self.in_x(feats)                       # (N, H)
        hy = self.in_y.weight.T                     # (C, H)
        return self._tail(hx[None] + hy[:, None])


class PosteriorEncoder(nn.Module):
    """q(z_P|x,y)·q(z_A|x,y): dense Beta branch, convolutional Dirichlet branch."""

    def __init__(self, grid: WavelengthGrid, n_classes: int, n_a: int = DEFAULT_N_A):
        super().__init__()
        self.n_classes = n_classes
        self.n_a = n_a
        self.beta_head = _AffineClassHead(grid.n_bands, n_classes, 2)
        self.conv = ConvFeatures(grid.n_bands)
        self.gamma_head = _ClassConditionedHead(self.conv.out_features, n_classes, n_a)

    @staticmethod
    def _positive(raw: torch.Tensor) -> torch.Tensor:
        return F.softplus(raw) + POSITIVE_EPS

    def forward(self, x: torch.Tensor, y: torch.Tensor):
        """Returns ((alpha, beta), gamma), all strictly positive."""
        ab = self._positive(self.beta_head(x, y))
        gamma = self._positive(self.gamma_head(self.conv(x), y))
        return (ab[..., 0], ab[..., 1]), gamma

    def all_classes(self, x: torch.Tensor):
        """Posterior parameters for every class: ((C, N), (C, N)), (C, N, n_A)."""
        ab = self._positive(self.beta_head.all_classes(x))
        gamma = self._positive(self.gamma_head.all_classes(self.conv(x)))
        return (ab[..., 0], ab[..., 1]), gamma


class ReflectanceDecoder(nn.Module):
    """f_A: class-conditioned reflectance mixture.

    The per-class basis is the elementwise product of two (B, n_A) matrices,
    each produced by a dense map of the one-hot class, squashed by a sigmoid
    so every column is a valid reflectance in [0, 1]^B. The basis depends on
    the class alone, so it is evaluated once per distinct class.
    """

    def __init__(self, n_bands: int, n_classes: int, n_a: int = DEFAULT_N_A):
        super().__init__()
        self.n_bands = n_bands
        self.n_classes = n_classes
        self.n_a = n_a
        self.map1 = nn.Sequential(
            nn.Linear(n_classes, HIDDEN), nn.ReLU(), nn.Linear(HIDDEN, n_bands * n_a)
        )
        self.map2 = nn.Sequential(
            nn.Linear(n_classes, HIDDEN), nn.ReLU(), nn.Linear(HIDDEN, n_bands * n_a)
        )

    def basis_table(self, detach: bool = False) -> torch.Tensor:
        """(C, B, n_A) mixture basis for every class."""
        eye = torch.eye(self.n_classes, dtype=self.map1[0].weight.dtype)
        m = self.map1(eye) * self.map2(eye)
        table = torch.sigmoid(m.view(self.n_classes, self.n_bands, self.n_a))
        return table.detach() if detach else table

    def basis(self, y: torch.Tensor, detach: bool = False) -> torch.Tensor:
        return self.basis_table(detach=detach)[y.long()]

    def forward(self, y: torch.Tensor, z_a: torch.Tensor, detach_basis: bool = False) -> torch.Tensor:
        return torch.einsum("nbk,nk->nb", self.basis(y, detach_basis), z_a)

    def all_classes(self, z_a: torch.Tensor, detach_basis: bool = False) -> torch.Tensor:
        """Mixture for per-class weights z_a (C, N, n_A) -> (C, N, B)."""
        return torch.einsum("cbk,cnk->cnb", self.basis_table(detach_basis), z_a)


class PhysicsLayer(nn.Module):
    """f_P as a torch layer with the irradiance vectors held as buffers."""

    def __init__(self, irr: IrradianceModel):
        super().__init__()
        self.register_buffer("i_dir", torch.as_tensor(irr.I_dir_o, dtype=torch.float64))
        self.register_buffer("i_dif", torch.as_tensor(irr.I_dif_o, dtype=torch.float64))
        self.cos_theta_o = float(irr.cos_theta_o)

    def ratio(self, z_p: torch.Tensor) -> torch.Tensor:
        i_dir = self.i_dir.to(z_p.dtype)
        i_dif = self.i_dif.to(z_p.dtype)
        denom = self.cos_theta_o * i_dir + i_dif
        z = z_p[..., None]
        return (z * i_dir + (z + G_OFFSET) * i_dif) / denom

    def forward(self, rho_hat: torch.Tensor, z_p: torch.Tensor) -> torch.Tensor:
        return self.ratio(z_p) * rho_hat


class HybridPhysicsVAE(nn.Module):
    """Semi-supervised VAE whose decoder composes f_A with the physics f_P."""

    name = "p3vae"
    uses_gradient_stopping = True

    def __init__(self, grid: WavelengthGrid, irr: IrradianceModel, n_classes: int,
                 n_a: int = DEFAULT_N_A):
        super().__init__()
        self.grid = grid
        self.n_classes = n_classes
        self.n_a = n_a
        self.classifier = SpectralClassifier(grid, n_classes)
        self.encoder = PosteriorEncoder(grid, n_classes, n_a)
        self.decoder = ReflectanceDecoder(grid.n_bands, n_classes, n_a)
        self.physics = PhysicsLayer(irr)

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(x)

    def encode(self, x: torch.Tensor, y: torch.Tensor):
        return self.encoder(x, y)

    def posteriors(self, x: torch.Tensor, y: torch.Tensor):
        (a, b), gamma = self.encode(x, y)
        return Beta(a, b), Dirichlet(gamma)

    def decode(self, y: torch.Tensor, z_a: torch.Tensor, z_p: torch.Tensor,
               detach_fa: bool = False) -> torch.Tensor:
        rho_hat = self.decoder(y, z_a, detach_basis=detach_fa)
        return self.physics(rho_hat, z_p)

    def decode_all_classes(self, z_a: torch.Tensor, z_p: torch.Tensor,
                           detach_fa: bool = False) -> torch.Tensor:
        """Reconstructions (C, N, B) for per-class latents."""
        return self.physics(self.decoder.all_classes(z_a, detach_fa), z_p)

    def forward(self, x: torch.Tensor, y: torch.Tensor, detach_fa: bool = False):
        """One reparameterized pass; returns (mu, z_p, z_a, posteriors)."""
        q_zp, q_za = self.posteriors(x, y)
        z_p = q_zp.rsample()
        z_a = q_za.rsample()
        mu = self.decode(y, z_a, z_p, detach_fa=detach_fa)
        return mu, z_p, z_a, (q_zp, q_za)


class PhysicsGuidedVAE(HybridPhysicsVAE):
    """Ablated assembly: same encoder/posteriors, decoder is f_A alone."""

    name = "physics_guided"
    uses_gradient_stopping = True

    def decode(self, y, z_a, z_p, detach_fa: bool = False):
        return self.decoder(y, z_a, detach_basis=detach_fa)

    def decode_all_classes(self, z_a, z_p, detach_fa: bool = False):
        return self.decoder.all_classes(z_a, detach_fa)


class GaussianVAE(nn.Module):
    """Conventional semi-supervised VAE with a gaussian latent of dim n_A + 1."""

    name = "gaussian_vae"
    uses_gradient_stopping = False

    def __init__(self, grid: WavelengthGrid, n_classes: int, n_a: int = DEFAULT_N_A):
        super().__init__()
        self.grid = grid
        self.n_classes = n_classes
        self.latent_dim = n_a + 1
        self.classifier = SpectralClassifier(grid, n_classes)
        self.conv = ConvFeatures(grid.n_bands)
        self.enc_head = _ClassConditionedHead(self.conv.out_features, n_classes,
                                              2 * self.latent_dim)
        self.dec_head = _AffineClassHead(self.latent_dim, n_classes, HIDDEN)
        self.dec_out = nn.Linear(HIDDEN, grid.n_bands)

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(x)

    @staticmethod
    def _split(h: torch.Tensor):
        mean, logvar = h.chunk(2, dim=-1)
        return mean, logvar.clamp(-10.0, 10.0)

    def encode(self, x: torch.Tensor, y: torch.Tensor):
        return self._split(self.enc_head(self.conv(x), y))

    def encode_all_classes(self, x: torch.Tensor):
        return self._split(self.enc_head.all_classes(self.conv(x)))

    def decode(self, y: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.dec_out(F.relu(self.dec_head(z, y))))

    def decode_all_classes(self, z: torch.Tensor) -> torch.Tensor:
        """Reconstructions (C, N, B) for per-class latents z (C, N, D)."""
        h = self.dec_head.in_x(z) + self.dec_head.in_y.weight.T[:, None]
        return torch.sigmoid(self.dec_out(F.relu(h)))

    def forward(self, x: torch.Tensor, y: torch.Tensor):
        mean, logvar = self.encode(x, y)
        z = mean + torch.randn_like(mean) * torch.exp(0.5 * logvar)
        return self.decode(y, z), z, (mean, logvar)


class CNNClassifier(nn.Module):
    """Purely discriminative baseline: the classifier alone."""

    name = "cnn"
    uses_gradient_stopping = False

    def __init__(self, grid: WavelengthGrid, n_classes: int):
        super().__init__()
        self.grid = grid
        self.n_classes = n_classes
        self.classifier = SpectralClassifier(grid, n_classes)

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(x)


def mc_dropout_predict(model: nn.Module, x: torch.Tensor, n_passes: int = 20):
    """MC Dropout predictive mean and per-class std over stochastic passes.

    ``n_passes=1`` runs a single deterministic pass (dropout disabled) and
    reduces to ``classify``.
    """
    if n_passes < 1:
        raise ValueError("n_passes must be >= 1")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            if n_passes == 1:
                probs = model.classify(x)[None]
            else:
                for module in model.modules():
                    if isinstance(module, nn.Dropout):
                        module.train()
                probs = torch.stack([model.classify(x) for _ in range(n_passes)])
    finally:
        model.train(was_training)
    return probs.mean(0), probs.std(0, unbiased=False)
