"""Central-difference verification of tape gradients.

check_gradients runs a scalar-valued builder twice per perturbed element
and compares the finite-difference slope against the analytic gradient.
Verification is float64 only; detach outputs recorded on the reference
forward are replayed on every perturbed evaluation so detached subgraphs
stay pinned at their unperturbed values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, record_detach, replay_detach
from .errors import ContractError

STEP_MIN = 1e-7
STEP_MAX = 1e-4
DEFAULT_TOLERANCE = 1e-5

# Relative error denominator floor: gradient pairs below this magnitude
# compare on an absolute scale of tolerance * floor instead of dividing
# by ~0. The floor must sit above what a central difference can resolve:
# each evaluation carries rounding of order eps * |loss|, so the quotient
# noise is about eps * |loss| / (2h) ~ 1e-10 per unit of loss at the
# smallest permitted step. With the floor at 1e-3 the implied absolute
# demand is 1e-8 -- two orders above that noise, yet far below any real
# backward bug, which disturbs gradients at the scale of the gradients
# themselves.
_REL_FLOOR = 1e-3


@dataclass
class GradReport:
    """Result of one check: worst relative error per leaf plus the verdict."""

    step_size: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    passed: bool = False

    @property
    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def _evaluate(fn, arrays, detach_values) -> float:
    leaves = {k: Tensor(v.copy(), name=k) for k, v in arrays.items()}
    with replay_detach(detach_values):
        out = fn(leaves)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("gradient-check builder must return a scalar Tensor")
    return float(out.data.reshape(()))


def check_gradients(fn, inputs: dict[str, np.ndarray], h: float = 1e-6,
                    tolerance: float = DEFAULT_TOLERANCE) -> GradReport:
    """Compare analytic gradients of fn against central differences.

    fn maps a dict of named leaf Tensors to a scalar Tensor and must be
    deterministic. inputs supplies the float64 leaf values; every element
    of every leaf is perturbed by +-h. The relative error for a pair
    (analytic a, finite-difference f) is |a - f| / max(|a|, |f|, floor)
    with the floor at 1e-3 (see _REL_FLOOR), and the check passes when
    every leaf's maximum is <= tolerance.
    """
    if not STEP_MIN <= h <= STEP_MAX:
        raise ContractError(f"step size {h} outside [{STEP_MIN}, {STEP_MAX}]")
    if not inputs:
        raise ContractError("check_gradients needs at least one input leaf")
    for k, v in inputs.items():
        if np.asarray(v).dtype != np.float64:
            raise ContractError(f"input '{k}' must be float64 for verification")

    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    leaves = {k: Tensor(v.copy(), name=k) for k, v in base.items()}
    with record_detach() as detach_values:
        out = fn(leaves)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("gradient-check builder must return a scalar Tensor")
    out.backward()
    analytic = {
        k: (leaves[k].grad if leaves[k].grad is not None
            else np.zeros_like(base[k]))
        for k in base
    }

    report = GradReport(step_size=h, tolerance=tolerance)
    for k, arr in base.items():
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = _evaluate(fn, base, detach_values)
            flat[i] = orig - h
            lo = _evaluate(fn, base, detach_values)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(fd)), _REL_FLOOR)
        rel = np.abs(analytic[k] - fd) / denom
        report.errors[k] = float(rel.max()) if rel.size else 0.0
    report.passed = all(e <= tolerance for e in report.errors.values())
    return report
