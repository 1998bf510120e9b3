"""Caption side of the model: tokens, a frozen embedder, and the latent head.

The embedder stands in for a large pretrained text encoder: a fixed
random embedding matrix, mean-pooled over tokens, never receiving
gradients. The trainable part is a three-layer affine head that maps the
pooled feature to the mean and (clamped log-) standard deviation of a
diagonal Gaussian over the latent code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .scene import DEFAULT_CATALOG

PAD_ID = 0
UNK_ID = 1

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 3.0


@dataclass(frozen=True)
class Vocabulary:
    """Token table with pinned specials: pad=0, unknown=1."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 2 or self.tokens[0] != "<pad>" or self.tokens[1] != "<unk>":
            raise ConfigError("vocabulary must start with <pad>, <unk>")
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary entries must be unique")

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        seen = []
        for w in words:
            if w not in seen and w not in ("<pad>", "<unk>"):
                seen.append(w)
        return cls(tokens=("<pad>", "<unk>", *seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            return UNK_ID

    def words_of(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocabulary(catalog=DEFAULT_CATALOG) -> Vocabulary:
    """Stable vocabulary for the caption templates over a catalog."""
    words = ["a", "small", "large", "room", "with", "and"]
    words.extend(cls.name for cls in catalog)
    return Vocabulary.from_words(words)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lowercase whitespace tokenization; unknown words map to <unk>."""
    return [vocab.id_of(w) for w in text.lower().split()]


class FrozenEmbedder:
    """Fixed random token embeddings with mean pooling.

    The matrix is generated once from (seed, vocab_size, dim) and is never
    touched by training; embeddings are plain numpy, outside the tape.
    """

    def __init__(self, vocab_size: int, dim: int, seed: int):
        if vocab_size < 2 or dim < 1:
            raise ConfigError("embedder needs vocab_size >= 2 and dim >= 1")
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 29]))
        self.matrix = rng.standard_normal((vocab_size, dim)).astype(np.float32)

    def embed(self, token_ids) -> np.ndarray:
        """Mean of the token rows; the empty caption embeds to zeros."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size == 0:
            return np.zeros(self.dim, dtype=np.float32)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ContractError(
                f"token id out of range [0, {self.vocab_size}) in {ids.tolist()}"
            )
        return self.matrix[ids].mean(axis=0)

    def embed_batch(self, token_id_lists) -> np.ndarray:
        out = np.zeros((len(token_id_lists), self.dim), dtype=np.float32)
        for i, ids in enumerate(token_id_lists):
            out[i] = self.embed(ids)
        return out


@dataclass
class LatentDistribution:
    """Diagonal Gaussian over the latent code, as tape nodes."""

    mu: Tensor
    sigma: Tensor
    log_sigma: Tensor

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


def init_text_head(text_dim: int, hidden: tuple[int, int], latent_dim: int,
                   seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Fan-in-scaled uniform init, zero biases, for the 3-layer head."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    sizes = [text_dim, hidden[0], hidden[1], 2 * latent_dim]
    params = {}
    for layer, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / n_in)
        params[f"w{layer}"] = Tensor(
            rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype),
            name=f"text.w{layer}")
        params[f"b{layer}"] = Tensor(np.zeros(n_out, dtype=dtype),
                                     name=f"text.b{layer}")
    return params


def text_head(features: Tensor, params: dict[str, Tensor],
              latent_dim: int) -> LatentDistribution:
    """Map pooled caption features (batch, text_dim) to the latent Gaussian.

    Three affine layers with relu between them; the output splits into the
    mean and a log-std clamped to [-6, 3] before exponentiation, so sigma
    stays inside [e^-6, e^3].
    """
    if features.data.ndim != 2:
        raise ContractError("text_head expects (batch, text_dim) features")
    h = ad.relu(ad.affine(features, params["w0"], params["b0"], name="text.l0"))
    h = ad.relu(ad.affine(h, params["w1"], params["b1"], name="text.l1"))
    out = ad.affine(h, params["w2"], params["b2"], name="text.l2")
    if out.shape[-1] != 2 * latent_dim:
        raise ContractError(
            f"text head emits width {out.shape[-1]}, expected {2 * latent_dim}"
        )
    mu = ad.narrow(out, 1, 0, latent_dim, name="text.mu")
    log_sigma = ad.clamp(ad.narrow(out, 1, latent_dim, latent_dim),
                         lo=LOG_SIGMA_MIN, hi=LOG_SIGMA_MAX,
                         name="text.log_sigma")
    sigma = ad.exp(log_sigma, name="text.sigma")
    return LatentDistribution(mu=mu, sigma=sigma, log_sigma=log_sigma)


def reparameterize(dist: LatentDistribution, eps) -> Tensor:
    """z = mu + eps * sigma with eps held constant.

    eps never receives a parameter update; gradients flow to mu and sigma
    only.
    """
    eps_t = eps if isinstance(eps, Tensor) else ad.constant(
        np.asarray(eps), dtype=dist.mu.dtype, name="eps")
    if eps_t.shape != dist.mu.shape:
        raise ContractError(
            f"eps shape {eps_t.shape} does not match mu {dist.mu.shape}"
        )
    return ad.add(dist.mu, ad.mul(eps_t, dist.sigma, name="eps_scaled"),
                  name="latent_sample")
