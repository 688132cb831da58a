"""
Differentiable layers built on the tape: matmul, valid convolution, softmax,
normalization, activations, the LSTM cell and the regularized loss
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from engine.tensor import DTYPE, Tensor, as_tensor
from utils.errors import ConfigError, DataError, DimensionError, NumericError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5


def matmul(a, b):
    """
    Matrix product over the trailing two axes; leading axes must match

    Args:
        a (Tensor): [..., p, q]
        b (Tensor): [..., q, r]

    Returns:
        Tensor: [..., p, r]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    x, y = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(y, -1, -2), np.swapaxes(x, -1, -2) @ g

    return Tensor.make("matmul", x @ y, (a, b), backward)


def conv_valid(x, kernels, stride=(1, 1), bias=None):
    """
    Valid (unpadded) cross-correlation with per-filter bias

    Args:
        x (Tensor): [Cin, H, W] or [B, Cin, H, W]
        kernels (Tensor): [Cout, Cin, kh, kw]
        stride (tuple): (sh, sw), both >= 1
        bias (Tensor): [Cout] or None

    Returns:
        Tensor: [Cout, H', W'] or [B, Cout, H', W'] with H' = (H-kh)//sh + 1
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv_valid expects [B,Cin,H,W] input and [Cout,Cin,kh,kw] kernels, got {x.shape} and {kernels.shape}")

    sh, sw = stride
    _, cin, h, w = x.shape
    cout, kcin, kh, kw = kernels.shape
    if sh < 1 or sw < 1:
        raise DimensionError(f"conv_valid strides must be >= 1, got {stride}")
    if kcin != cin:
        raise DimensionError(f"conv_valid channel mismatch: input has {cin}, kernels expect {kcin}")
    if kh > h or kw > w:
        raise DimensionError(f"conv_valid kernel {kh}x{kw} larger than input {h}x{w}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv_valid bias shape {bias.shape} does not match {cout} filters")

    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1

    # [B, Cin, H', W', kh, kw]
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    k = kernels.data
    out = np.tensordot(windows, k, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    x_shape = x.shape

    def backward(g):
        g_k = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        g_x = np.zeros(x_shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, k[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                g_x[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += contrib
        grads = (g_x, g_k)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    out = Tensor.make("conv_valid", out, inputs, backward, {"stride": (sh, sw)})
    return out.reshape(out.shape[1:]) if squeeze else out


def softmax_rows(x):
    """
    Softmax along the last axis with per-row max subtraction

    Args:
        x (Tensor): [..., q]

    Returns:
        Tensor: Row-stochastic tensor of the same shape
    """
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor.make("softmax_rows", y, (x,), backward)


def layer_norm(x, gamma=None, beta=None, eps=LN_EPS, axes=None):
    """
    Normalize to zero mean and unit variance over `axes`, then apply the affine map

    Args:
        x (Tensor): Input
        gamma (Tensor): Scale broadcast over the normalized extent, or None
        beta (Tensor): Shift broadcast over the normalized extent, or None
        eps (float): Added to the variance
        axes (tuple): Normalized axes; all axes when None

    Returns:
        Tensor: Normalized tensor
    """
    axes = tuple(range(x.ndim)) if axes is None else tuple(axes)
    count = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std

    def backward(g):
        return (inv_std / count * (count * g - g.sum(axis=axes, keepdims=True)
                                   - x_hat * (g * x_hat).sum(axis=axes, keepdims=True)),)

    out = Tensor.make("layer_norm", x_hat, (x,), backward)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


@dataclass
class BatchNormState:
    """Running statistics of one batch-normalization layer"""

    num_channels: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)
    updates: int = 0

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.num_channels, dtype=DTYPE)
        if self.running_var is None:
            self.running_var = np.ones(self.num_channels, dtype=DTYPE)

    def copy(self):
        return BatchNormState(self.num_channels, self.momentum, self.eps,
                              self.running_mean.copy(), self.running_var.copy(), self.updates)


def batch_norm(x, gamma, beta, state, training):
    """
    Per-channel normalization over batch and spatial extents

    In training mode the batch statistics are used and the running statistics
    are updated with momentum (running variance uses the unbiased estimate).
    In eval mode the running statistics are used verbatim; before any training
    update they are the initial mean 0 and variance 1.

    Args:
        x (Tensor): [B, C, ...]
        gamma (Tensor): [C]
        beta (Tensor): [C]
        state (BatchNormState): Running statistics, mutated in training mode
        training (bool): Mode switch

    Returns:
        Tensor: Normalized tensor
    """
    if x.ndim < 2 or x.shape[1] != state.num_channels:
        raise DimensionError(f"batch_norm expects [B, {state.num_channels}, ...], got {x.shape}")
    if training and x.shape[0] < 1:
        raise DimensionError("batch_norm needs at least one sample in training mode")

    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)

    if training:
        count = int(np.prod([x.shape[a] for a in axes]))
        mu = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mu
        var = (centered ** 2).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat = centered * inv_std

        unbiased = var.reshape(-1) * (count / (count - 1)) if count > 1 else var.reshape(-1)
        state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mu.reshape(-1)
        state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbiased
        state.updates += 1

        def backward(g):
            return (inv_std / count * (count * g - g.sum(axis=axes, keepdims=True)
                                       - x_hat * (g * x_hat).sum(axis=axes, keepdims=True)),)

        normalized = Tensor.make("batch_norm", x_hat, (x,), backward)
    else:
        mu = state.running_mean.reshape(bshape)
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).reshape(bshape)
        normalized = Tensor.make("batch_norm_eval", (x.data - mu) * inv_std, (x,),
                                 lambda g: (g * inv_std,))

    return normalized * gamma.reshape(bshape) + beta.reshape(bshape)


def relu(x):
    return x.relu()


def dropout(x, p, training, rng=None):
    """
    Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity

    Args:
        x (Tensor): Input
        p (float): Drop probability in [0, 1)
        training (bool): Mode switch
        rng (np.random.Generator): Mask source, required when training with p > 0

    Returns:
        Tensor: Masked tensor
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}", key="dropout")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator", key="dropout")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask


def pointwise(x, kind, p=0.0, training=False, rng=None):
    """Dispatch for the pointwise layers: kind is "relu" or "dropout" """
    if kind == "relu":
        return relu(x)
    if kind == "dropout":
        return dropout(x, p, training, rng)
    raise ConfigError(f"unknown pointwise kind '{kind}'", key="kind")


@dataclass
class LstmWeights:
    """Gate weights in (input, forget, cell, output) column blocks"""

    w_ih: Tensor  # [d_in, 4*d_h]
    w_hh: Tensor  # [d_h, 4*d_h]
    bias: Tensor  # [4*d_h]

    @property
    def hidden(self):
        return self.w_hh.shape[0]


def lstm_step(x_t, h_prev, c_prev, weights):
    """
    One LSTM time step

    Args:
        x_t (Tensor): [d_in] or [B, d_in]
        h_prev (Tensor): [d_h] or [B, d_h]
        c_prev (Tensor): [d_h] or [B, d_h]
        weights (LstmWeights): Gate parameters

    Returns:
        tuple: (h_t, c_t)
    """
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t, h_prev, c_prev = x_t.reshape(1, -1), h_prev.reshape(1, -1), c_prev.reshape(1, -1)

    d = weights.hidden
    z = matmul(x_t, weights.w_ih) + matmul(h_prev, weights.w_hh) + weights.bias
    i = z[:, 0:d].sigmoid()
    f = z[:, d:2 * d].sigmoid()
    g = z[:, 2 * d:3 * d].tanh()
    o = z[:, 3 * d:4 * d].sigmoid()

    c_t = f * c_prev + i * g
    h_t = o * c_t.tanh()

    if squeeze:
        return h_t.reshape(-1), c_t.reshape(-1)
    return h_t, c_t


def linear(x, weight, bias=None):
    """x @ weight + bias with weight stored [in, out]"""
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def cross_entropy_with_l2(logits, labels, l2_lambda=0.0, last_fc_weights=None):
    """
    Mean softmax cross-entropy plus an L2 penalty on the final layer's weights

    Args:
        logits (Tensor): [B, C]
        labels (array-like): B class indices in [0, C)
        l2_lambda (float): Penalty coefficient
        last_fc_weights (Tensor): Weights of the last fully connected layer (no bias)

    Returns:
        Tensor: Scalar loss
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = logits.shape
    if labels.shape[0] != batch:
        raise DataError(f"got {labels.shape[0]} labels for a batch of {batch}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise DataError(f"labels must lie in [0, {classes}), got {labels.tolist()}")

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    nll = -log_probs[rows, labels].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (g * grad / batch,)

    loss = Tensor.make("cross_entropy", np.array(nll), (logits,), backward)
    if l2_lambda and last_fc_weights is not None:
        loss = loss + last_fc_weights.square().sum() * l2_lambda
    return loss


def log_softmax_np(z):
    """Stable log-softmax over the last axis of a plain array"""
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_np(z):
    return np.exp(log_softmax_np(z))
