"""Depth decoder shared by the caption and image branches.

The latent grid enters at h/8 x w/8 and is upsampled three times back to
full resolution. Skip connections from the image sampler join at matching
sizes: the coarsest at the decoder input, the two finer ones after the
first and second upsampling stages; the final full-resolution stage takes
no skip. The caption branch has no sampler pass, so it supplies the ZERO
sentinel and the skip slots are filled with zero tensors of the right
shapes, keeping one set of weights valid for both branches.

Depth output is depth_floor + softplus(u), strictly positive everywhere.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

DEPTH_FLOOR = 1e-3


class _ZeroSkips:
    """Sentinel: decode() fills every skip slot with zeros."""

    def __repr__(self):
        return "ZERO"


ZERO = _ZeroSkips()


def init_decoder(latent_dim: int, skip_channels: tuple[int, int, int],
                 channels: tuple[int, int, int], seed: int,
                 dtype=np.float32) -> dict[str, Tensor]:
    """Fan-in-scaled uniform init, zero biases.

    skip_channels are the sampler stage widths ordered fine-to-coarse
    (h/2, h/4, h/8); channels are this decoder's stage widths.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    fine, mid, coarse = skip_channels
    specs = [
        ("conv1", latent_dim + coarse + mid, channels[0]),
        ("conv2", channels[0] + fine, channels[1]),
        ("conv3", channels[1], channels[2]),
    ]
    params = {}
    for name, c_in, c_out in specs:
        fan_in = c_in * 9
        bound = np.sqrt(6.0 / fan_in)
        params[f"{name}.w"] = Tensor(
            rng.uniform(-bound, bound, (c_out, c_in, 3, 3)).astype(dtype),
            name=f"decoder.{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros(c_out, dtype=dtype),
                                     name=f"decoder.{name}.b")
    bound = np.sqrt(6.0 / channels[2])
    params["head.w"] = Tensor(
        rng.uniform(-bound, bound, (1, channels[2], 1, 1)).astype(dtype),
        name="decoder.head.w")
    params["head.b"] = Tensor(np.zeros(1, dtype=dtype), name="decoder.head.b")
    return params


def tile_latent(z: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Spread a (batch, latent_dim) code uniformly over the latent grid."""
    return ad.tile_to_grid(z, grid_h, grid_w, name="tile_latent")


def combine_latent(mu: Tensor, sigma: Tensor, eps_grid: Tensor) -> Tensor:
    """Per-cell reparameterization: z[:, :, i, j] = mu + eps[:, :, i, j] * sigma."""
    if eps_grid.data.ndim != 4:
        raise ContractError("combine_latent expects a (b, d, h, w) eps grid")
    if mu.data.shape != sigma.data.shape or mu.data.ndim != 2:
        raise ContractError("mu and sigma must both be (batch, latent_dim)")
    if mu.data.shape != eps_grid.data.shape[:2]:
        raise ContractError(
            f"latent dims disagree: mu {mu.data.shape} vs eps {eps_grid.data.shape}"
        )
    gh, gw = eps_grid.shape[2], eps_grid.shape[3]
    mu_t = ad.tile_to_grid(mu, gh, gw, name="combine.mu")
    sigma_t = ad.tile_to_grid(sigma, gh, gw, name="combine.sigma")
    return ad.add(mu_t, ad.mul(eps_grid, sigma_t, name="combine.scaled"),
                  name="combine_latent")


def _zero_skips(batch: int, grid_h: int, grid_w: int,
                skip_channels: tuple[int, int, int], dtype) -> list[Tensor]:
    fine, mid, coarse = skip_channels
    shapes = [(batch, fine, grid_h * 4, grid_w * 4),
              (batch, mid, grid_h * 2, grid_w * 2),
              (batch, coarse, grid_h, grid_w)]
    return [ad.constant(np.zeros(s, dtype=dtype), dtype=dtype, name="zero_skip")
            for s in shapes]


def decode(z_grid: Tensor, skips, params: dict[str, Tensor],
           skip_channels: tuple[int, int, int]) -> Tensor:
    """Decode a latent grid (+ skips or ZERO) to a (batch, h, w) depth map."""
    if z_grid.data.ndim != 4:
        raise ContractError("decode expects a (b, d, gh, gw) latent grid")
    b, _, gh, gw = z_grid.data.shape
    if skips is ZERO:
        skips = _zero_skips(b, gh, gw, skip_channels, z_grid.dtype)
    if len(skips) != 3:
        raise ContractError("decode needs three skips or the ZERO sentinel")
    s1, s2, s3 = skips
    expect = [(b, skip_channels[0], gh * 4, gw * 4),
              (b, skip_channels[1], gh * 2, gw * 2),
              (b, skip_channels[2], gh, gw)]
    for t, shape in zip((s1, s2, s3), expect):
        if t.data.shape != shape:
            raise ContractError(
                f"skip shape {t.data.shape} does not match expected {shape}"
            )

    x = ad.concat([z_grid, s3], axis=1, name="decoder.in")
    x = ad.upsample2x(x, name="decoder.up1")
    x = ad.concat([x, s2], axis=1, name="decoder.cat1")
    x = ad.relu(ad.conv2d(x, params["conv1.w"], params["conv1.b"],
                          name="decoder.conv1"))
    x = ad.upsample2x(x, name="decoder.up2")
    x = ad.concat([x, s1], axis=1, name="decoder.cat2")
    x = ad.relu(ad.conv2d(x, params["conv2.w"], params["conv2.b"],
                          name="decoder.conv2"))
    x = ad.upsample2x(x, name="decoder.up3")
    x = ad.relu(ad.conv2d(x, params["conv3.w"], params["conv3.b"],
                          name="decoder.conv3"))
    u = ad.conv2d(x, params["head.w"], params["head.b"], name="decoder.head")
    depth = ad.softplus(u, name="decoder.softplus") + DEPTH_FLOOR
    return ad.reshape(depth, (b, depth.shape[2], depth.shape[3]),
                      name="decoder.depth")
