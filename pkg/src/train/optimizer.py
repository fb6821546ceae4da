import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.nets.tape import Parameter
from src.utils.errors import NonFiniteLossError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def get_expon_lr_func(lr_init: float, lr_final: float, max_steps: int) -> Callable[[int], float]:
    """Log-linear interpolation from ``lr_init`` to ``lr_final`` over ``max_steps``."""

    def helper(step: int) -> float:
        if lr_init == lr_final or max_steps <= 0:
            return lr_init
        t = np.clip(step / max_steps, 0.0, 1.0)
        return float(np.exp(np.log(lr_init) * (1.0 - t) + np.log(lr_final) * t))

    return helper


def constant_lr(lr: float) -> Callable[[int], float]:
    return lambda step: lr


@dataclass
class OptimizerState:
    """First/second moment buffers and an update count, one each per parameter.

    A parameter's count only advances when it is actually updated, so bias
    correction restarts for a group that was frozen.
    """

    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    steps: List[int] = field(default_factory=list)

    @property
    def step(self) -> int:
        return max(self.steps, default=0)


@dataclass
class ParamGroup:
    name: str
    params: List[Parameter]
    schedule: Callable[[int], float]
    state: OptimizerState = field(default_factory=OptimizerState)
    lr: float = 0.0


class Adam:
    """Adam over named parameter groups with per-group learning-rate schedules."""

    def __init__(self, groups: Sequence[ParamGroup]):
        self.groups = list(groups)
        for group in self.groups:
            group.state = OptimizerState(
                m=[np.zeros_like(p.value) for p in group.params],
                v=[np.zeros_like(p.value) for p in group.params],
                steps=[0] * len(group.params),
            )
            group.lr = group.schedule(0)
        self.logger = logging.getLogger(__name__)

    def parameters(self) -> List[Parameter]:
        return [p for group in self.groups for p in group.params]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def update_learning_rate(self, iteration: int) -> Dict[str, float]:
        for group in self.groups:
            group.lr = group.schedule(iteration)
        return {group.name: group.lr for group in self.groups}

    def check_finite(self, step: int, loss: float):
        """Raise if the loss or any group's gradient is not finite.

        Raises:
            NonFiniteLossError: naming the step and the offending group
        """
        if not np.isfinite(loss):
            group = self._first_bad_group()
            raise NonFiniteLossError(step, group or "loss", loss)
        group = self._first_bad_group()
        if group is not None:
            raise NonFiniteLossError(step, group, loss)

    def _first_bad_group(self) -> Optional[str]:
        for group in self.groups:
            for p in group.params:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    return group.name
        return None

    def step(self):
        """One Adam update; parameters without a gradient are left untouched."""
        for group in self.groups:
            state = group.state
            for i, p in enumerate(group.params):
                if p.grad is None or p.frozen:
                    continue
                state.steps[i] += 1
                bias1 = 1.0 - BETA1 ** state.steps[i]
                bias2 = 1.0 - BETA2 ** state.steps[i]
                g = p.grad.astype(p.dtype, copy=False)
                state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g
                state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g
                m_hat = state.m[i] / bias1
                v_hat = state.v[i] / bias2
                p.value = (p.value - group.lr * m_hat / (np.sqrt(v_hat) + EPS)).astype(p.dtype, copy=False)
