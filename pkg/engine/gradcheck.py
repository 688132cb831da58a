"""
Central finite-difference gradient checking
"""

import numpy as np

from engine.tensor import backward, get_tape, no_grad


def numerical_gradient(loss_fn, tensor, h=1e-5):
    """
    Central differences of a scalar loss with respect to every entry of a tensor

    Args:
        loss_fn (callable): Recomputes the scalar loss (returns Tensor or float)
        tensor (Tensor): Tensor whose .data is perturbed in place and restored
        h (float): Step

    Returns:
        np.ndarray: Gradient estimate with the tensor's shape
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    with no_grad():
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            plus = float(np.asarray(_value(loss_fn())))
            flat[idx] = original - h
            minus = float(np.asarray(_value(loss_fn())))
            flat[idx] = original
            grad.reshape(-1)[idx] = (plus - minus) / (2.0 * h)
    return grad


def _value(result):
    return result.data if hasattr(result, "data") else result


def analytic_gradients(loss_fn, tensors):
    """Run one taped forward and backward; return copies of each tensor's gradient"""
    for t in tensors:
        t.grad = None
    get_tape().clear()
    loss = loss_fn()
    backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise |a-n| / max(|a|, |n|, floor)"""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def gradient_check(loss_fn, tensors, h=1e-5, rtol=1e-4, atol=1e-7):
    """
    Compare taped gradients with central differences

    Entries pass when |a-n| <= atol + rtol*max(|a|,|n|).

    Args:
        loss_fn (callable): Recomputes the scalar loss deterministically
        tensors (list[Tensor]): Tensors to check
        h (float): Finite-difference step
        rtol (float): Relative tolerance
        atol (float): Absolute tolerance for near-zero gradients

    Returns:
        tuple: (ok, worst relative error, per-tensor report list)
    """
    analytic = analytic_gradients(loss_fn, tensors)
    reports = []
    ok = True
    worst = 0.0
    for tensor, a in zip(tensors, analytic):
        n = numerical_gradient(loss_fn, tensor, h)
        diff = np.abs(a - n)
        bound = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        passed = bool(np.all(diff <= bound))
        err = float(relative_error(a, n).max()) if a.size else 0.0
        worst = max(worst, err if not passed else 0.0)
        ok = ok and passed
        reports.append({"name": tensor.name, "passed": passed, "max_abs_diff": float(diff.max()) if a.size else 0.0})
    return ok, worst, reports
