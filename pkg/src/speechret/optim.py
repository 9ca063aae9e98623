"""Adam with bias correction, keyed by parameter block name."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .tensor import Tensor


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamSlot:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class AdamState:
    slots: dict[str, AdamSlot] = field(default_factory=dict)

    def slot_for(self, name: str, like: np.ndarray) -> AdamSlot:
        slot = self.slots.get(name)
        if slot is None:
            slot = AdamSlot(m=np.zeros_like(like), v=np.zeros_like(like))
            self.slots[name] = slot
        return slot


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, config: AdamConfig) -> None:
    """One bias-corrected update for every block present in ``grads``.

    Blocks without a gradient this step keep their parameters and moments
    untouched, so inactive branches stay bit-identical to initialization.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in parameter block {name!r}")
        tensor = params[name]
        slot = state.slot_for(name, tensor.data)
        slot.t += 1
        slot.m = config.beta1 * slot.m + (1.0 - config.beta1) * grad
        slot.v = config.beta2 * slot.v + (1.0 - config.beta2) * grad * grad
        m_hat = slot.m / (1.0 - config.beta1 ** slot.t)
        v_hat = slot.v / (1.0 - config.beta2 ** slot.t)
        tensor.data = tensor.data - (
            config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        ).astype(tensor.data.dtype)


def state_arrays(state: AdamState) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    arrays: dict[str, np.ndarray] = {}
    steps: dict[str, int] = {}
    for name, slot in state.slots.items():
        arrays[f"adam.m.{name}"] = slot.m
        arrays[f"adam.v.{name}"] = slot.v
        steps[name] = slot.t
    return arrays, steps


def state_from_arrays(arrays: dict[str, np.ndarray],
                      steps: dict[str, int]) -> AdamState:
    state = AdamState()
    for name, t in steps.items():
        state.slots[name] = AdamSlot(m=arrays[f"adam.m.{name}"],
                                     v=arrays[f"adam.v.{name}"], t=t)
    return state
