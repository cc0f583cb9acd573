"""
Optimizer and learning-rate schedule
Adam with bias correction plus the linear decay used for fine-tuning
"""

import logging
from dataclasses import dataclass, field
from typing import Collection, Dict, Mapping

import numpy as np

from .exceptions import OptimizerError, ParameterError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment buffers and the shared step counter"""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class LrSchedule:
    """Linear decay from base_lr at step 0 to zero at total_steps"""
    base_lr: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ParameterError(f"total_steps must be positive, got {self.total_steps}")
        if self.base_lr < 0:
            raise ParameterError(f"base_lr must be non-negative, got {self.base_lr}")

    def lr(self, step: int) -> float:
        return max(0.0, self.base_lr * (1.0 - step / self.total_steps))


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    frozen: Collection[str] = (),
) -> AdamState:
    """Apply one Adam update in place to every unfrozen parameter"""
    missing = [name for name, p in params.items() if name not in frozen and p.grad is None]
    if missing:
        raise OptimizerError(f"missing gradient for unfrozen parameter(s): {', '.join(missing[:5])}")

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        if name in frozen:
            continue
        grad = param.grad
        if grad.shape != param.shape:
            raise OptimizerError(f"gradient shape {grad.shape} does not match parameter {name} {param.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        if lr == 0.0:
            continue
        m_hat = m / bias1
        v_hat = v / bias2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
