"""Evaluation metrics for metric depth, pooled over the valid pixels.

All metrics treat the supplied arrays as one pixel population: callers
evaluating a split concatenate predictions first. Computation is float64
and independent of the autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    rmse: float
    log10: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int

    def to_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "rmse": self.rmse,
            "log10": self.log10,
            "rmse_log": self.rmse_log,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "n_pixels": self.n_pixels,
        }


def _validated(pred, target, mask):
    pred = np.asarray(pred)
    target = np.asarray(target)
    mask = np.asarray(mask)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ContractError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, "
            f"mask {mask.shape}"
        )
    if mask.dtype != np.bool_:
        raise ContractError("mask must be boolean")
    return pred, target, mask


def compute_metrics(pred, target, mask) -> MetricsReport:
    """Standard depth metrics over the masked pixels.

    abs_rel: mean |target - pred| / target
    rmse: root mean squared error in metres
    log10: mean |log10 pred - log10 target|
    rmse_log: root mean squared natural-log error
    delta_k: fraction with max(pred/target, target/pred) < 1.25^k (strict)
    """
    pred, target, mask = _validated(pred, target, mask)
    if not mask.any():
        raise ContractError("metrics need at least one valid pixel")
    y = pred[mask].astype(np.float64)
    t = target[mask].astype(np.float64)
    if not (t > 0).all() or not (y > 0).all():
        raise ContractError("metrics need positive depths under the mask")

    err = t - y
    ratio = np.maximum(y / t, t / y)
    log_err = np.log(y) - np.log(t)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(err) / t)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        log10=float(np.mean(np.abs(np.log10(y) - np.log10(t)))),
        rmse_log=float(np.sqrt(np.mean(log_err ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n_pixels=int(mask.sum()),
    )


def error_map(pred, target, mask) -> np.ndarray:
    """Per-pixel relative error |target - pred| / target, zero off-mask."""
    pred, target, mask = _validated(pred, target, mask)
    if not (target[mask] > 0).all():
        raise ContractError("error_map needs positive target depths under the mask")
    out = np.zeros(pred.shape, dtype=np.float64)
    out[mask] = np.abs(target[mask].astype(np.float64) - pred[mask]) \
        / target[mask].astype(np.float64)
    return out
