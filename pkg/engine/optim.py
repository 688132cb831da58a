"""
Adam optimizer
"""

from dataclasses import dataclass, field

import numpy as np

from engine.tensor import no_grad


@dataclass
class AdamState:
    """Step counter and per-parameter moment buffers"""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, grads=None):
    """
    Apply one bias-corrected Adam update in place

    Args:
        params (Mapping[str, Tensor]): Named trainable tensors
        state (AdamState): Moment buffers, advanced by one step
        grads (Mapping[str, np.ndarray]): Gradients; defaults to each tensor's .grad

    Returns:
        Mapping[str, Tensor]: The updated params
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    with no_grad():
        for name, param in params.items():
            grad = grads[name] if grads is not None else param.grad
            if grad is None:
                grad = np.zeros_like(param.data)

            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(param.data)
                v = np.zeros_like(param.data)

            m = state.beta1 * m + (1.0 - state.beta1) * grad
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
            state.m[name] = m
            state.v[name] = v

            m_hat = m / correction1
            v_hat = v / correction2
            param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    return params


class Adam:
    """Convenience wrapper binding a parameter mapping to its AdamState"""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None

    def step(self):
        adam_step(self.params, self.state)
