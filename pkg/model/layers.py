"""
Forward stages of the network: Con1 edge-to-node aggregation, the per-channel
attention reconstruction, Con2/Con3 aggregation and the LSTM + FC head
"""

import math
from dataclasses import dataclass

import numpy as np

from engine.functional import (
    LstmWeights, batch_norm, conv_valid, dropout, layer_norm, linear, lstm_step, matmul, softmax_rows,
)
from engine.tensor import Tensor
from utils.errors import DimensionError, UsageError


@dataclass
class AttentionScores:
    """Row-stochastic N x N score matrix per channel, captured for one scan"""

    values: np.ndarray  # [C, N, N]
    scan_id: str = ""

    @property
    def channels(self):
        return self.values.shape[0]

    def row_sums(self):
        return self.values.sum(axis=-1)


def _post_conv(x, params, layer, bn_state, rate, training, rng):
    x = batch_norm(x, params[f"{layer}.gamma"], params[f"{layer}.beta"], bn_state, training)
    return dropout(x.relu(), rate, training, rng)


def as_batch(values, config):
    """Accept [T, N, N] or [B, T, N, N] connectivity and check it against the config"""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        values = values[None]
    expected = (config.n_windows, config.n_regions, config.n_regions)
    if values.ndim != 4 or values.shape[1:] != expected:
        raise DimensionError(f"dFCN input shape {values.shape[1:] if values.ndim == 4 else values.shape} "
                             f"does not match config (T, N, N) = {expected}")
    return values


def con1_forward(F, params, config, bn_state=None, training=False, rng=None):
    """
    Row-wise edge-to-node aggregation across S1 adjacent windows

    out[k, i, t] = sum_j sum_s W[k, j, s] * F[t + s, i, j] + b[k], followed by
    BN, ReLU and dropout unless bn_state is None (pre-BN output).

    Args:
        F (np.ndarray): [T, N, N] or [B, T, N, N]
        params (ModelParams): Weights
        config (ModelConfig): Shapes
        bn_state (BatchNormState): Running statistics for bn1, or None for the raw convolution
        training (bool): Mode switch
        rng (np.random.Generator): Dropout source

    Returns:
        Tensor: [B, C1, N, T - S1 + 1]
    """
    batch = as_batch(F, config)
    # channels are the column index j, rows the region i, width the window t
    x = Tensor(np.ascontiguousarray(batch.transpose(0, 3, 2, 1)))
    kernel = params["con1.weight"].reshape(config.c1, config.n_regions, 1, config.s1)
    out = conv_valid(x, kernel, (1, 1), params["con1.bias"])
    if bn_state is None:
        return out
    return _post_conv(out, params, "bn1", bn_state, config.dropout_conv, training, rng)


def dca_forward(I, params, config, apply_layer_norm=True):
    """
    Per-channel scaled dot-product attention with scalar Q/K/V transforms

    Q = w_Q * I, K = w_K * I, V = w_V * I per channel; P = softmax(Q K^T / sqrt(d_k));
    O = P V + I, then layer normalization over (channel, region, time) per sample.

    Args:
        I (Tensor): [B, C1, N, U1]
        params (ModelParams): Weights (dca.w_q, dca.w_k, dca.w_v, optional dca.b_*)
        config (ModelConfig): Shapes and d_k mode
        apply_layer_norm (bool): False returns the residual sum before normalization

    Returns:
        tuple: (O Tensor [B, C1, N, U1], list[AttentionScores] one per sample)
    """
    if not config.dca_enabled or "dca.w_q" not in params:
        raise UsageError("the attention layer is disabled in this model")
    if I.ndim != 4 or I.shape[1] != config.c1:
        raise DimensionError(f"attention input must be [B, {config.c1}, N, U1], got {I.shape}")

    scalar_shape = (1, config.c1, 1, 1)

    def transform(weight, bias):
        out = I * params[weight].reshape(scalar_shape)
        if bias in params:
            out = out + params[bias].reshape(scalar_shape)
        return out

    q = transform("dca.w_q", "dca.b_q")
    k = transform("dca.w_k", "dca.b_k")
    v = transform("dca.w_v", "dca.b_v")

    logits = matmul(q, k.swap_last()) * (1.0 / math.sqrt(config.d_k))
    p = softmax_rows(logits)
    out = matmul(p, v) + I

    scores = [AttentionScores(values=p.data[b].copy()) for b in range(p.shape[0])]
    if apply_layer_norm:
        out = layer_norm(out, axes=(1, 2, 3))
    return out, scores


def con2_forward(X, params, config, bn_state=None, training=False, rng=None):
    """
    Full-depth convolution collapsing the region extent: [B, C1, N, U1] -> [B, K1, 1, U1 - S2 + 1]
    """
    out = conv_valid(X, params["con2.weight"], (1, 1), params["con2.bias"])
    if bn_state is None:
        return out
    return _post_conv(out, params, "bn2", bn_state, config.dropout_conv, training, rng)


def con3_forward(X, params, config, bn_state=None, training=False, rng=None):
    """
    Temporal convolution with stride 2: [B, K1, 1, U] -> [B, K2, 1, (U - S3) // 2 + 1]
    """
    if X.shape[-1] < config.s3:
        raise DimensionError(f"Con3 kernel width {config.s3} exceeds input length {X.shape[-1]}")
    out = conv_valid(X, params["con3.weight"], (1, 2), params["con3.bias"])
    if bn_state is None:
        return out
    return _post_conv(out, params, "bn3", bn_state, config.dropout_conv, training, rng)


def temporal_head_forward(X, params, config, training=False, rng=None, capture=None):
    """
    LSTM over the U2 steps of K2 features, then ReLU, dropout and three FC layers

    Only the final hidden state feeds the head. Logits are returned raw.

    Args:
        X (Tensor): [B, K2, 1, U2]
        params (ModelParams): Weights
        config (ModelConfig): Shapes
        training (bool): Mode switch
        rng (np.random.Generator): Dropout source
        capture (dict): When given, receives "head" = post-ReLU final hidden state

    Returns:
        Tensor: [B, num_classes]
    """
    batch, features, _, steps = X.shape
    seq = X.reshape(batch, features, steps).transpose(0, 2, 1)

    weights = LstmWeights(params["lstm.w_ih"], params["lstm.w_hh"], params["lstm.bias"])
    h = Tensor(np.zeros((batch, weights.hidden)))
    c = Tensor(np.zeros((batch, weights.hidden)))
    for t in range(steps):
        h, c = lstm_step(seq[:, t, :], h, c, weights)

    hidden = h.relu()
    if capture is not None:
        capture["head"] = hidden.data.copy()

    x = dropout(hidden, config.dropout_lstm, training, rng)
    x = linear(x, params["fc1.weight"], params["fc1.bias"]).relu()
    x = linear(x, params["fc2.weight"], params["fc2.bias"]).relu()
    return linear(x, params["fc_out.weight"], params["fc_out.bias"])
