"""
Bias-corrected Adam over named parameter groups.
"""
from dataclasses import dataclass, field

import numpy as np

from apps.core.exceptions import DivergenceError
from apps.gaussians.cloud import GaussianCloud


@dataclass
class OptimState:
    first_moments: dict = field(default_factory=dict)
    second_moments: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_parameters(cls, params, names=None):
        names = list(params) if names is None else list(names)
        return cls(
            first_moments={name: np.zeros_like(params[name]) for name in names},
            second_moments={name: np.zeros_like(params[name]) for name in names},
        )


def adam_step(state, params, grads, lr, iteration=None):
    """
    Update ``params`` in place with ``grads`` and return (state, params).

    ``params`` is a GaussianCloud or a mapping of arrays; only the groups
    present in ``grads`` move. Quaternions are renormalized afterwards.
    """
    iteration = state.step if iteration is None else iteration
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"Non-finite gradient for {name} at iteration {iteration}", iteration)

    arrays = params.parameters() if isinstance(params, GaussianCloud) else params
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        if name not in state.first_moments:
            state.first_moments[name] = np.zeros_like(grad)
            state.second_moments[name] = np.zeros_like(grad)
        first = state.first_moments[name]
        second = state.second_moments[name]
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad * grad
        arrays[name] -= lr * (first / correction1) / (np.sqrt(second / correction2) + state.eps)

    if isinstance(params, GaussianCloud):
        params.normalize_rotations()
    return state, params
