"""Adam, the cosine learning-rate schedule, and the branch alternation rule.

The alternation is a deterministic low-discrepancy selection: step s is a
caption step exactly when floor((s+1)*p) > floor(s*p), which spaces the
caption steps evenly and makes any window of n steps contain within one
of n*p of them. Frozen parameter groups are simply not passed to step(),
so neither their values nor their moments are touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, ContractError

TEXT_STEP = "text"
IMAGE_STEP = "image"


def schedule_select(step: int, p: float) -> str:
    """Branch for global step `step` under caption-step ratio p."""
    if step < 0:
        raise ContractError("step index must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"ratio p={p} outside [0, 1]")
    if math.floor((step + 1) * p) > math.floor(step * p):
        return TEXT_STEP
    return IMAGE_STEP


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Half-cosine decay from lr_start to lr_end over total_steps."""
    if total_steps < 1:
        raise ContractError("total_steps must be at least 1")
    if step < 0 or step > total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * frac))


@dataclass
class _Slot:
    m: np.ndarray
    v: np.ndarray
    t: int


@dataclass
class Adam:
    """Adam with bias correction and no weight decay.

    Moment buffers are keyed by parameter name and live in the parameter
    dtype. A parameter absent from a step() call keeps value, moments and
    step count bit-identical.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    slots: dict[str, _Slot] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            slot = self.slots.get(name)
            if slot is None:
                slot = _Slot(m=np.zeros_like(p.data), v=np.zeros_like(p.data), t=0)
                self.slots[name] = slot
            if slot.m.shape != p.data.shape:
                raise ContractError(f"moment shape mismatch for '{name}'")
            slot.t += 1
            slot.m = self.beta1 * slot.m + (1.0 - self.beta1) * g
            slot.v = self.beta2 * slot.v + (1.0 - self.beta2) * (g * g)
            m_hat = slot.m / (1.0 - self.beta1 ** slot.t)
            v_hat = slot.v / (1.0 - self.beta2 ** slot.t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moments and per-parameter step counts as named arrays."""
        out = {}
        for name, slot in self.slots.items():
            out[f"adam.m.{name}"] = slot.m.copy()
            out[f"adam.v.{name}"] = slot.v.copy()
            out[f"adam.t.{name}"] = np.array([slot.t], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        names = {k[len("adam.m."):] for k in arrays if k.startswith("adam.m.")}
        self.slots = {}
        for name in names:
            try:
                m = arrays[f"adam.m.{name}"]
                v = arrays[f"adam.v.{name}"]
                t = int(arrays[f"adam.t.{name}"][0])
            except KeyError as missing:
                raise ContractError(f"incomplete optimizer state: {missing}")
            self.slots[name] = _Slot(m=m.copy(), v=v.copy(), t=t)
