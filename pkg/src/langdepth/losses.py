"""Training objectives.

The depth term is a scale-invariant log loss: with e = ln(pred) -
ln(target) over the N valid pixels of a sample,

    L_SI = (1/N) * sum(e^2) - (gamma/N^2) * (sum(e))^2,

averaged over the batch. gamma in (0, 1] interpolates between plain log
MSE and full scale invariance; the loss is non-negative for gamma <= 1.
The latent regularizer is the diagonal-Gaussian KL to the standard
normal, reduced by mean over latent dimensions (and batch),

    L_KL = mean(-ln(sigma) + (sigma^2 + mu^2)/2 - 1/2).

The caption objective applies the KL to the caption head's output; the
image objective applies it to the batch statistics of the predicted
perturbation grid (population std per latent dim over batch x cells,
floored away from zero).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


def _masked_log_error(pred: Tensor, target: np.ndarray, mask: np.ndarray):
    """Per-pixel e = ln(pred) - ln(target), exactly zero off-mask."""
    dtype = pred.dtype
    if target.shape != pred.data.shape or mask.shape != pred.data.shape:
        raise ContractError(
            f"shape mismatch: pred {pred.data.shape}, target {target.shape}, "
            f"mask {mask.shape}"
        )
    if mask.dtype != np.bool_:
        raise ContractError("mask must be boolean")
    if not (target[mask] > 0).all():
        raise ContractError("target depths under the mask must be positive")
    if not (pred.data[mask] > 0).all():
        raise ContractError("predicted depths under the mask must be positive")
    m = mask.astype(dtype)
    inv_m = (~mask).astype(dtype)
    # pred*m + (1-m) is pred on the mask and exactly 1 elsewhere, so the
    # log is 0 off-mask and off-mask pixels contribute nothing, bit-exactly.
    gated = ad.add(ad.mul(pred, ad.constant(m, dtype=dtype, name="mask")),
                   ad.constant(inv_m, dtype=dtype), name="si.gate")
    log_pred = ad.log(gated, name="si.log_pred")
    log_target = np.zeros_like(target, dtype=dtype)
    log_target[mask] = np.log(target[mask].astype(dtype))
    return ad.add(log_pred,
                  ad.constant(-log_target, dtype=dtype, name="si.log_target"),
                  name="si.err")


def si_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray,
            gamma: float) -> Tensor:
    """Scale-invariant log depth loss, batch mean.

    pred is (h, w) or (batch, h, w); target/mask are numpy of the same
    shape. Every sample needs at least one valid pixel, and both depths
    must be positive wherever the mask is set.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma {gamma} outside [0, 1]")
    squeeze = pred.data.ndim == 2
    if squeeze:
        pred = ad.reshape(pred, (1,) + pred.data.shape)
        target = target[None]
        mask = mask[None]
    if pred.data.ndim != 3:
        raise ContractError("si_loss expects (h, w) or (batch, h, w) depths")
    counts = mask.sum(axis=(1, 2))
    if (counts == 0).any():
        raise ContractError("a sample has no valid pixels under its mask")

    e = _masked_log_error(pred, target, mask)
    dtype = pred.dtype
    inv_n = ad.constant((1.0 / counts).astype(dtype), dtype=dtype, name="si.inv_n")
    sq_term = ad.mul(ad.tsum(ad.mul(e, e), axis=(1, 2)), inv_n, name="si.sq")
    s = ad.tsum(e, axis=(1, 2), name="si.sum_e")
    mean_sq = ad.mul(ad.mul(s, s), ad.mul(inv_n, inv_n), name="si.mean_sq")
    per_sample = ad.add(sq_term, ad.mul(mean_sq, ad.constant(-gamma, dtype=dtype)),
                        name="si.per_sample")
    return ad.tmean(per_sample, name="si_loss")


def kl_loss(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) per dim, reduced by mean over everything."""
    if mu.data.shape != sigma.data.shape:
        raise ContractError(
            f"mu shape {mu.data.shape} != sigma shape {sigma.data.shape}"
        )
    if not (sigma.data > 0).all():
        raise ContractError("sigma must be positive everywhere")
    half = ad.mul(ad.add(ad.mul(sigma, sigma), ad.mul(mu, mu)),
                  ad.constant(0.5, dtype=mu.dtype), name="kl.half")
    per_dim = ad.add(ad.add(ad.neg(ad.log(sigma, name="kl.log_sigma")), half),
                     ad.constant(-0.5, dtype=mu.dtype), name="kl.per_dim")
    return ad.tmean(per_dim, name="kl_loss")


def batch_eps_stats(eps_grid: Tensor, sigma_floor: float):
    """Per-latent-dim mean and floored population std over batch x cells.

    eps_grid is (batch, latent_dim, gh, gw); the statistics pool the
    batch and both spatial axes, so each latent dim sees batch*gh*gw
    cells. Requires at least two cells; the std is floored at sigma_floor
    through a one-sided clamp on the variance, which also absorbs the
    tiny negative variances float arithmetic can produce.
    """
    if eps_grid.data.ndim != 4:
        raise ContractError("batch_eps_stats expects (b, d, gh, gw)")
    b, _, gh, gw = eps_grid.data.shape
    if b * gh * gw < 2:
        raise ContractError("need at least two cells per latent dim")
    if sigma_floor <= 0:
        raise ContractError("sigma_floor must be positive")
    mean = ad.tmean(eps_grid, axis=(0, 2, 3), name="eps.mean")
    mean_sq = ad.tmean(ad.mul(eps_grid, eps_grid), axis=(0, 2, 3),
                       name="eps.mean_sq")
    var = ad.add(mean_sq, ad.neg(ad.mul(mean, mean)), name="eps.var")
    floor2 = float(sigma_floor) ** 2
    std = ad.sqrt(ad.clamp(var, lo=floor2, name="eps.var_floored"),
                  name="eps.std")
    return mean, std


def vae_objective(pred: Tensor, target: np.ndarray, mask: np.ndarray,
                  dist, gamma: float, alpha: float):
    """Caption-branch loss: L_SI + alpha * KL of the caption distribution."""
    si = si_loss(pred, target, mask, gamma)
    kl = kl_loss(dist.mu, dist.sigma)
    return ad.add(si, ad.mul(kl, ad.constant(alpha, dtype=si.dtype)),
                  name="vae_objective"), si, kl


def cs_objective(pred: Tensor, target: np.ndarray, mask: np.ndarray,
                 eps_grid: Tensor, gamma: float, beta: float,
                 sigma_floor: float):
    """Image-branch loss: L_SI + beta * KL of the perturbation statistics."""
    si = si_loss(pred, target, mask, gamma)
    mean, std = batch_eps_stats(eps_grid, sigma_floor)
    kl = kl_loss(mean, std)
    return ad.add(si, ad.mul(kl, ad.constant(beta, dtype=si.dtype)),
                  name="cs_objective"), si, kl
