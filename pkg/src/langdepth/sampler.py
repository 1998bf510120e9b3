"""Image-conditioned sampler: predicts a patch-wise latent perturbation.

Three stride-2 conv stages walk a (batch, c, h, w) image down to h/8 x
w/8, the caption distribution's mean and std are tiled onto that grid and
concatenated, and a 1x1 head emits one perturbation vector per cell with
no output activation. The caption statistics pass through detach before
entering this graph, so no gradient from the sampler's losses ever
reaches the caption head. The stage outputs double as skip connections
for the depth decoder.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError


def init_sampler(image_channels: int, channels: tuple[int, int, int],
                 latent_dim: int, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Fan-in-scaled uniform init, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 37]))
    params = {}
    c_in = image_channels
    for stage, c_out in enumerate(channels, start=1):
        fan_in = c_in * 9
        bound = np.sqrt(6.0 / fan_in)
        params[f"conv{stage}.w"] = Tensor(
            rng.uniform(-bound, bound, (c_out, c_in, 3, 3)).astype(dtype),
            name=f"sampler.conv{stage}.w")
        params[f"conv{stage}.b"] = Tensor(np.zeros(c_out, dtype=dtype),
                                          name=f"sampler.conv{stage}.b")
        c_in = c_out
    head_in = channels[-1] + 2 * latent_dim
    bound = np.sqrt(6.0 / head_in)
    params["head.w"] = Tensor(
        rng.uniform(-bound, bound, (latent_dim, head_in, 1, 1)).astype(dtype),
        name="sampler.head.w")
    params["head.b"] = Tensor(np.zeros(latent_dim, dtype=dtype),
                              name="sampler.head.b")
    return params


def check_sampler_geometry(height: int, width: int) -> None:
    if height % 8 or width % 8:
        raise ConfigError(
            f"sampler needs spatial sides divisible by 8, got {height}x{width}"
        )


def encode_image(image: Tensor, mu: Tensor, sigma: Tensor,
                 params: dict[str, Tensor]):
    """Run the conv trunk and emit (eps_grid, skips).

    eps_grid is (batch, latent_dim, h/8, w/8); skips are the three stage
    activations at h/2, h/4 and h/8. mu and sigma are detached here, which
    both enforces the freeze contract and keeps re-detaching idempotent
    for callers that already did.
    """
    if image.data.ndim != 4:
        raise ContractError("encode_image expects (batch, c, h, w) images")
    check_sampler_geometry(image.data.shape[2], image.data.shape[3])
    if mu.data.ndim != 2 or mu.data.shape != sigma.data.shape:
        raise ContractError("mu and sigma must both be (batch, latent_dim)")
    if mu.data.shape[0] != image.data.shape[0]:
        raise ContractError("batch size mismatch between image and latents")

    s1 = ad.relu(ad.conv2d(image, params["conv1.w"], params["conv1.b"],
                           stride=2, name="sampler.conv1"))
    s2 = ad.relu(ad.conv2d(s1, params["conv2.w"], params["conv2.b"],
                           stride=2, name="sampler.conv2"))
    s3 = ad.relu(ad.conv2d(s2, params["conv3.w"], params["conv3.b"],
                           stride=2, name="sampler.conv3"))
    gh, gw = s3.shape[2], s3.shape[3]
    mu_d = ad.detach(mu, name="sampler.mu_detached")
    sigma_d = ad.detach(sigma, name="sampler.sigma_detached")
    cond = ad.concat([s3, ad.tile_to_grid(mu_d, gh, gw),
                      ad.tile_to_grid(sigma_d, gh, gw)], axis=1,
                     name="sampler.cond")
    eps_grid = ad.conv2d(cond, params["head.w"], params["head.b"],
                         name="sampler.head")
    return eps_grid, [s1, s2, s3]
