"""
Dense float64 tensors with an operation tape for reverse-mode differentiation
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from utils.errors import DimensionError, UsageError

DTYPE = np.float64


@dataclass(eq=False)
class TapeNode:
    """One recorded operation: its output, producer inputs, and the backward rule"""

    op_id: str
    inputs: tuple
    output: "Tensor"
    backward_fn: object
    saved: dict = field(default_factory=dict)


class Tape:
    """Creation-ordered record of differentiable operations"""

    def __init__(self):
        self.nodes = []
        self.enabled = True

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def get_tape():
    """Return the calling thread's tape"""
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = Tape()
        _local.tape = tape
    return tape


@contextmanager
def no_grad():
    """Suspend recording; used for eval-mode forwards and parameter updates"""
    tape = get_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = previous


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand's shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """
    Row-major float64 value with an optional gradient buffer

    Leaves created with requires_grad=True accumulate gradients in .grad;
    callers zero them between steps.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @staticmethod
    def make(op_id, data, inputs, backward_fn, saved=None):
        """
        Wrap an op result, recording a tape node when any input needs gradients

        Args:
            op_id (str): Operation tag
            data (np.ndarray): Forward value
            inputs (tuple): Producer tensors
            backward_fn (callable): Maps the output gradient to one gradient per input
            saved (dict): Values kept for inspection of the backward rule

        Returns:
            Tensor: Output tensor
        """
        out = Tensor(data)
        tape = get_tape()
        if tape.enabled and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            node = TapeNode(op_id, tuple(inputs), out, backward_fn, saved or {})
            out._node = node
            tape.record(node)
        return out

    # elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.make(
            "add", self.data + other.data, (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor.make("neg", -self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.make(
            "sub", self.data - other.data, (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor.make(
            "mul", a * b, (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor.make(
            "div", a / b, (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __matmul__(self, other):
        from engine.functional import matmul
        return matmul(self, other)

    # shape manipulation

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        try:
            data = self.data.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"cannot reshape {original} to {shape}: {e}")
        return Tensor.make("reshape", data, (self,), lambda g: (g.reshape(original),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.make(
            "transpose", np.transpose(self.data, axes), (self,),
            lambda g: (np.transpose(g, inverse),),
        )

    def swap_last(self):
        """Transpose the two trailing axes"""
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)

    def __getitem__(self, index):
        shape = self.shape

        def backward(g):
            full = np.zeros(shape, dtype=DTYPE)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.make("index", self.data[index], (self,), backward)

    # reductions

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.make("sum", self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # elementwise functions

    def exp(self):
        y = np.exp(self.data)
        return Tensor.make("exp", y, (self,), lambda g: (g * y,))

    def log(self):
        x = self.data
        return Tensor.make("log", np.log(x), (self,), lambda g: (g / x,))

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor.make("tanh", y, (self,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self):
        # split by sign so large magnitudes do not overflow exp
        x = self.data
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return Tensor.make("sigmoid", y, (self,), lambda g: (g * y * (1.0 - y),))

    def relu(self):
        mask = self.data > 0
        return Tensor.make("relu", np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def square(self):
        x = self.data
        return Tensor.make("square", x * x, (self,), lambda g: (2.0 * g * x,))


def backward(loss):
    """
    Populate .grad on every leaf that requires gradients, then clear the tape

    Args:
        loss (Tensor): Scalar produced through recorded operations
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar root, got shape {loss.shape}")

    tape = get_tape()
    seed = np.ones_like(loss.data)

    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
        tape.clear()
        return

    grads = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, inp_grad in zip(node.inputs, node.backward_fn(g)):
            if inp_grad is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad = inp_grad.copy() if inp.grad is None else inp.grad + inp_grad
            else:
                key = id(inp)
                grads[key] = inp_grad if key not in grads else grads[key] + inp_grad

    tape.clear()
