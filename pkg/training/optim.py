"""Adam with decoupled weight decay, and the warmup + cosine learning-rate schedule."""

import math
from typing import Dict, Mapping, Optional

import numpy as np

from autograd.tensor import Tensor
from core.errors import ContractError

NO_DECAY_SUFFIXES = (".bias", ".b1", ".b2")


def lr_at_step(step: int, steps: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear warmup to ``peak_lr`` then cosine decay to zero at ``steps``; later steps clamp."""
    if step < 0:
        raise ContractError(f"learning-rate step must be non-negative, got {step}")
    step = min(step, steps)
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    span = steps - warmup_steps
    progress = 1.0 if span <= 0 else (step - warmup_steps) / span
    return max(0.0, peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress)))


def decays(name: str) -> bool:
    """Weight decay applies to projection weights only.

    Excluded: biases, layer-norm gains and offsets, embedding tables and the
    contrastive temperature.
    """
    if name.endswith(NO_DECAY_SUFFIXES):
        return False
    if "norm" in name or name.startswith("embed.") or name.endswith("log_tau"):
        return False
    return True


class AdamState:
    """Per-parameter first and second moments plus the shared update counter."""

    def __init__(self) -> None:
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step = 0

    def check_shapes(self, params: Mapping[str, Tensor]) -> None:
        for name, moment in list(self.m.items()) + list(self.v.items()):
            if name in params and moment.shape != params[name].shape:
                raise ContractError(f"optimizer moment for '{name}' has shape {moment.shape}, parameter {params[name].shape}")


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> None:
    """One bias-corrected Adam update; parameters without a gradient are left alone."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name] if grads is not None and name in grads else p.grad
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient for '{name}' has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ContractError(f"optimizer moment for '{name}' has shape {m.shape}, parameter {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False)

        data = p.data
        if weight_decay and decays(name):
            data = data - (lr * weight_decay) * data
        data = data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = data.astype(p.dtype, copy=False)
