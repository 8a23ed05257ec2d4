"""
The signed distance network conditioned on blended surface codes.

All tensors are float64. Gradients with respect to query positions are built with
`create_graph=True` so losses that use them can be differentiated again.
"""
import logging

import numpy as np
import torch
from torch import nn

from errors import NumericalError
from models import NetConfig

__all__ = [
    'DTYPE', 'ImplicitNet', 'SurfaceCodes', 'LatentPartitionSDF', 'blend_codes', 'input_gradient', 'check_finite'
]

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CODE_INIT_STD = 1e-2
# Seed offset reserved for the code used outside a part's cell during part extraction
UNSEEN_CODE_SEED_OFFSET = 7919


def check_finite(tensor: torch.Tensor, what: str) -> None:
    """Raises NumericalError if the tensor holds NaN or Inf."""
    if not torch.isfinite(tensor).all():
        raise NumericalError(f'Non-finite values in {what}')


class ImplicitNet(nn.Module):
    def __init__(self, config: NetConfig, generator: torch.Generator | None = None):
        """MLP f(q, w) -> s with softplus activations and an optional input skip connection.

        Hidden layers use the geometric initialisation, so the untrained network is
        close to the SDF of a sphere of radius `config.init_radius`.
        """
        super().__init__()
        self.config = config
        self.in_dim = 3 + config.latent_dim
        dims = [self.in_dim] + [config.hidden_width] * config.n_layers + [1]
        self.skip_layers = {config.skip_layer} if 0 < config.skip_layer < len(dims) - 1 else set()

        layers = []
        for layer in range(len(dims) - 1):
            in_dim = dims[layer] + (self.in_dim if layer in self.skip_layers else 0)
            out_dim = dims[layer + 1]
            lin = nn.Linear(in_dim, out_dim, dtype=DTYPE)
            if layer == len(dims) - 2:
                nn.init.normal_(lin.weight, mean=np.sqrt(np.pi) / np.sqrt(in_dim), std=1e-5, generator=generator)
                nn.init.constant_(lin.bias, -config.init_radius)
            else:
                nn.init.normal_(lin.weight, 0.0, np.sqrt(2) / np.sqrt(out_dim), generator=generator)
                nn.init.constant_(lin.bias, 0.0)
            layers.append(lin)
        self.layers = nn.ModuleList(layers)
        self.activation = nn.Softplus(beta=config.softplus_beta)

    def forward(self, q: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        """Signed distances (B,) for queries (B, 3) and latent codes (B, T)."""
        inputs = torch.cat([q, w], dim=-1)
        x = inputs
        for layer, lin in enumerate(self.layers):
            if layer in self.skip_layers:
                x = torch.cat([x, inputs], dim=-1) / np.sqrt(2)
            x = lin(x)
            if layer < len(self.layers) - 1:
                x = self.activation(x)
        return x.squeeze(-1)


class SurfaceCodes(nn.Module):
    def __init__(self, n_codes: int, latent_dim: int, generator: torch.Generator | None = None):
        """One learnable latent code per region."""
        super().__init__()
        init = torch.randn(n_codes, latent_dim, generator=generator, dtype=DTYPE) * CODE_INIT_STD
        self.codes = nn.Parameter(init)

    def __len__(self) -> int:
        return self.codes.shape[0]


def blend_codes(a: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """Affinity-weighted sum of codes: (B, I) x (I, T) -> (B, T). Affinities are constants."""
    return torch.as_tensor(a, dtype=DTYPE).detach() @ codes


def input_gradient(net: ImplicitNet, q: torch.Tensor, w: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Signed distances and their gradient with respect to q, kept on the autograd graph."""
    if not q.requires_grad:
        q = q.detach().clone().requires_grad_(True)
    s = net(q, w)
    # Each s_b depends only on q_b, so the gradient of the sum is the per-query gradient
    (grad,) = torch.autograd.grad(s.sum(), q, create_graph=True)
    return s, grad


class LatentPartitionSDF(nn.Module):
    def __init__(self, config: NetConfig, n_codes: int, seed: int = 0):
        """The network, its surface codes and the fixed code used outside part cells."""
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.net = ImplicitNet(config, generator)
        self.codes = SurfaceCodes(n_codes, config.latent_dim, generator)

        unseen = torch.Generator().manual_seed(seed + UNSEEN_CODE_SEED_OFFSET)
        self.register_buffer(
            'unseen_code', torch.randn(config.latent_dim, generator=unseen, dtype=DTYPE) * CODE_INIT_STD
        )

    @property
    def config(self) -> NetConfig:
        return self.net.config

    def forward(self, q: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.net(q, blend_codes(a, self.codes.codes))

    def sdf_and_gradient(self, q: torch.Tensor, a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return input_gradient(self.net, q, blend_codes(a, self.codes.codes))

    def forward_unseen(self, q: torch.Tensor) -> torch.Tensor:
        """Signed distances using the never-trained code for every query."""
        return self.net(q, self.unseen_code.expand(q.shape[0], -1))
