"""Model assembly: parameter groups and the two forward branches.

Three trainable groups share one depth decoder: the caption head (maps
pooled text features to a latent Gaussian), the image sampler (predicts a
patch-wise latent perturbation plus decoder skips), and the decoder
itself. The caption branch decodes a single reparameterized draw tiled
over the latent grid with zeroed skips; the image branch decodes the
combined per-cell latent with live skips while the caption statistics are
frozen behind detach.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoder import ZERO, combine_latent, decode, init_decoder, tile_latent
from .errors import ConfigError, ContractError
from .sampler import check_sampler_geometry, encode_image, init_sampler
from .text import (
    FrozenEmbedder,
    LatentDistribution,
    init_text_head,
    reparameterize,
    text_head,
)


@dataclass(frozen=True)
class ModelConfig:
    image_channels: int = 1
    image_height: int = 32
    image_width: int = 32
    text_dim: int = 32
    latent_dim: int = 16
    text_hidden: tuple[int, int] = (64, 32)
    encoder_channels: tuple[int, int, int] = (8, 16, 32)
    decoder_channels: tuple[int, int, int] = (32, 16, 8)

    def __post_init__(self):
        check_sampler_geometry(self.image_height, self.image_width)
        if self.latent_dim < 1 or self.text_dim < 1:
            raise ConfigError("latent_dim and text_dim must be positive")
        if len(self.encoder_channels) != 3 or len(self.decoder_channels) != 3:
            raise ConfigError("both conv trunks use exactly three stages")

    @property
    def grid_h(self) -> int:
        return self.image_height // 8

    @property
    def grid_w(self) -> int:
        return self.image_width // 8


@dataclass
class ParameterSet:
    """All trainable tensors plus the frozen embedder."""

    config: ModelConfig
    text: dict[str, Tensor]
    sampler: dict[str, Tensor]
    decoder: dict[str, Tensor]
    embedder: FrozenEmbedder
    groups: tuple[str, ...] = field(default=("text", "sampler", "decoder"))

    def named(self) -> dict[str, Tensor]:
        out = {}
        for group in self.groups:
            for key, tensor in getattr(self, group).items():
                out[f"{group}.{key}"] = tensor
        return out

    def group(self, name: str) -> dict[str, Tensor]:
        if name not in self.groups:
            raise ContractError(f"unknown parameter group '{name}'")
        return {f"{name}.{k}": t for k, t in getattr(self, name).items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named()
        missing = set(named) - set(arrays)
        extra = set(arrays) - set(named)
        if missing or extra:
            raise ContractError(
                f"parameter names disagree: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for k, t in named.items():
            if arrays[k].shape != t.data.shape:
                raise ContractError(f"shape mismatch for '{k}'")
            t.data = arrays[k].astype(t.data.dtype).copy()

    def zero_grads(self) -> None:
        for t in self.named().values():
            t.grad = None


def init_parameters(config: ModelConfig, vocab_size: int, seed: int,
                    dtype=np.float32) -> ParameterSet:
    return ParameterSet(
        config=config,
        text=init_text_head(config.text_dim, config.text_hidden,
                            config.latent_dim, seed, dtype),
        sampler=init_sampler(config.image_channels, config.encoder_channels,
                             config.latent_dim, seed, dtype),
        decoder=init_decoder(config.latent_dim, config.encoder_channels,
                             config.decoder_channels, seed, dtype),
        embedder=FrozenEmbedder(vocab_size, config.text_dim, seed),
    )


def caption_distribution(features: np.ndarray,
                         params: ParameterSet) -> LatentDistribution:
    feats = ad.constant(features, dtype=_param_dtype(params), name="features")
    return text_head(feats, params.text, params.config.latent_dim)


def caption_branch(features: np.ndarray, eps: np.ndarray,
                   params: ParameterSet):
    """Caption -> latent draw -> tiled grid -> decode with zero skips."""
    cfg = params.config
    dist = caption_distribution(features, params)
    z = reparameterize(dist, eps.astype(_param_dtype(params), copy=False))
    grid = tile_latent(z, cfg.grid_h, cfg.grid_w)
    depth = decode(grid, ZERO, params.decoder, cfg.encoder_channels)
    return depth, dist


def image_branch(image: np.ndarray, features: np.ndarray,
                 params: ParameterSet):
    """Image + frozen caption stats -> per-cell latent -> decode with skips.

    The caption head runs inside the graph but its outputs enter only
    through detach nodes, so backward never reaches the text group.
    """
    cfg = params.config
    dtype = _param_dtype(params)
    if image.shape[1:] != (cfg.image_channels, cfg.image_height, cfg.image_width):
        raise ContractError(
            f"image shape {image.shape} does not match the model geometry"
        )
    img = ad.constant(image, dtype=dtype, name="image")
    dist = caption_distribution(features, params)
    mu_d = ad.detach(dist.mu, name="mu_frozen")
    sigma_d = ad.detach(dist.sigma, name="sigma_frozen")
    eps_grid, skips = encode_image(img, mu_d, sigma_d, params.sampler)
    z_grid = combine_latent(mu_d, sigma_d, eps_grid)
    depth = decode(z_grid, skips, params.decoder, cfg.encoder_channels)
    return depth, eps_grid, dist


def _param_dtype(params: ParameterSet):
    return params.text["w0"].dtype
