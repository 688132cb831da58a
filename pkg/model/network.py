"""
The full convolutional-recurrent classifier with optional attention reconstruction
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from engine.checkpoint import load_checkpoint, save_checkpoint
from engine.functional import BatchNormState, softmax_np
from engine.tensor import no_grad
from model.config import ModelConfig
from model.layers import (
    as_batch, con1_forward, con2_forward, con3_forward, dca_forward, temporal_head_forward,
)
from model.params import ModelParams, count_parameters, init_params
from utils.errors import FormatError
from utils.logger import logger

BN_LAYERS = ("bn1", "bn2", "bn3")
STATE_PREFIX = "state."


@dataclass
class ForwardResult:
    logits: object
    scores: list = None
    features: dict = field(default_factory=dict)
    shapes: OrderedDict = field(default_factory=OrderedDict)


class DcaCrnModel:
    """Parameters, batch-norm running statistics and the dropout generator of one network"""

    def __init__(self, config, params=None, seed=0, bn_states=None):
        """
        Args:
            config (ModelConfig): Validated config
            params (ModelParams): Existing weights; initialized from seed when None
            seed (int): Seed for initialization and dropout masks
            bn_states (dict): Existing running statistics keyed by bn layer
        """
        self.config = config.validate()
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.params = params if params is not None else init_params(config, np.random.default_rng(seeds[0]))
        self.dropout_rng = np.random.default_rng(seeds[1])
        channels = {"bn1": config.c1, "bn2": config.k1, "bn3": config.k2}
        self.bn_states = bn_states or {name: BatchNormState(channels[name]) for name in BN_LAYERS}

    def forward(self, F, training=False, capture=False):
        return model_forward(F, self, training, capture)

    def predict_proba(self, F, batch_size=64):
        """Eval-mode class probabilities for [B, T, N, N] connectivity"""
        batch = as_batch(F, self.config)
        probs = []
        with no_grad():
            for start in range(0, batch.shape[0], batch_size):
                result = self.forward(batch[start:start + batch_size], training=False)
                probs.append(softmax_np(result.logits.data))
        return np.concatenate(probs, axis=0)

    def count_parameters(self):
        return count_parameters(self.params)

    def snapshot(self):
        """Deep copy of weights and running statistics"""
        return self.params.copy(), {name: state.copy() for name, state in self.bn_states.items()}

    def restore(self, snapshot):
        params, bn_states = snapshot
        self.params = params.copy()
        self.bn_states = {name: state.copy() for name, state in bn_states.items()}

    def to_arrays(self):
        arrays = self.params.to_arrays()
        for name, state in self.bn_states.items():
            arrays[f"{STATE_PREFIX}{name}.running_mean"] = state.running_mean
            arrays[f"{STATE_PREFIX}{name}.running_var"] = state.running_var
        return arrays

    def save(self, path, extra_metadata=None):
        metadata = {"model_config": self.config.to_dict()}
        metadata.update(extra_metadata or {})
        return save_checkpoint(path, self.to_arrays(), metadata)

    @classmethod
    def load(cls, path, seed=0):
        """
        Rebuild a model from a checkpoint written by save()

        Returns:
            DcaCrnModel: Model in the saved state
        """
        arrays, metadata = load_checkpoint(path)
        if "model_config" not in metadata:
            raise FormatError("checkpoint metadata has no model_config", path=path)
        config = ModelConfig.from_dict(metadata["model_config"])

        template = init_params(config, np.random.default_rng(0))
        expected = OrderedDict((name, t.shape) for name, t in template.items())
        weights = OrderedDict((name, value) for name, value in arrays.items() if not name.startswith(STATE_PREFIX))
        unexpected = [name for name in weights if name not in expected]
        if unexpected:
            raise FormatError(f"checkpoint has unexpected parameters {unexpected}", path=path)
        params = ModelParams.from_arrays(OrderedDict((n, weights.get(n)) for n in expected if n in weights),
                                         expected)

        model = cls(config, params=params, seed=seed)
        for name, state in model.bn_states.items():
            mean_key = f"{STATE_PREFIX}{name}.running_mean"
            var_key = f"{STATE_PREFIX}{name}.running_var"
            if mean_key in arrays:
                state.running_mean = arrays[mean_key]
                state.running_var = arrays[var_key]
        logger.info(f"Loaded checkpoint {path} ({count_parameters(params)['total']} parameters)")
        return model


def model_forward(F, model, training=False, capture=False):
    """
    con1 -> (attention if enabled) -> con2 -> con3 -> LSTM/FC head

    Args:
        F (DfcnTensor | np.ndarray): [T, N, N] or [B, T, N, N]
        model (DcaCrnModel): Network state
        training (bool): Mode switch (batch statistics, dropout)
        capture (bool): Record intermediate features ("con1", "head")

    Returns:
        ForwardResult: logits [B, C]; attention scores per sample when enabled
    """
    values = getattr(F, "values", F)
    config, params, bn, rng = model.config, model.params, model.bn_states, model.dropout_rng

    batch = as_batch(values, config)
    shapes = OrderedDict(input=batch.shape[1:])
    features = {}

    x = con1_forward(batch, params, config, bn["bn1"], training, rng)
    shapes["con1"] = x.shape[1:]
    if capture:
        features["con1"] = x.data.copy()

    scores = None
    if config.dca_enabled:
        x, scores = dca_forward(x, params, config)
        shapes["dca"] = x.shape[1:]

    x = con2_forward(x, params, config, bn["bn2"], training, rng)
    shapes["con2"] = x.shape[1:]
    x = con3_forward(x, params, config, bn["bn3"], training, rng)
    shapes["con3"] = x.shape[1:]
    shapes["lstm_input"] = (x.shape[3], x.shape[1])

    head = {} if capture else None
    logits = temporal_head_forward(x, params, config, training, rng, capture=head)
    if capture:
        features["head"] = head["head"]
    shapes["logits"] = logits.shape[1:]

    return ForwardResult(logits=logits, scores=scores, features=features, shapes=shapes)
