"""Caption-conditioned metric depth estimation on synthetic indoor scenes.

The package bundles a small reverse-mode autodiff core, a deterministic
scene generator whose captions carry the metric scale the images cannot,
a variational caption-to-depth model with an image-conditioned latent
sampler, and the training/evaluation tooling around them.
"""

from .errors import (
    ConfigError,
    ContractError,
    CountMismatchError,
    FormatError,
    HeaderFormatError,
    NumericError,
    TruncatedRecordError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "CountMismatchError",
    "FormatError",
    "HeaderFormatError",
    "NumericError",
    "TruncatedRecordError",
]

__version__ = "0.1.0"
