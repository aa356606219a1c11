"""Adam with an L2 penalty folded into the gradient.

The penalty term lambda * theta is added to each parameter's gradient before
the moment updates, i.e. the penalty is part of the risk being minimized
rather than a decoupled weight-decay step.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_penalty: float = 0.0
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def _ensure_moments(self, params: list):
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p.data) for p in params]
            self.second_moment = [np.zeros_like(p.data) for p in params]
        if len(self.first_moment) != len(params):
            raise ContractError(
                f"optimizer state tracks {len(self.first_moment)} parameters, got {len(params)}")


def adam_step(params: list[Tensor], state: AdamState):
    """Apply one in-place Adam update to params using their .grad fields."""
    state._ensure_moments(params)
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} has no gradient; run backward first")
        if p.grad.shape != p.data.shape:
            raise ContractError(
                f"parameter {i} gradient shape {p.grad.shape} != value shape {p.data.shape}")
        g = p.grad
        if state.l2_penalty != 0.0:
            g = g + state.l2_penalty * p.data
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)


def zero_grads(params: list[Tensor]):
    for p in params:
        p.grad = None
