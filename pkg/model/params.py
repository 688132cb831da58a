"""
Trainable weights of the network and their initialization
"""

import math
from collections import OrderedDict

import numpy as np

from engine.tensor import Tensor
from utils.errors import FormatError

LAYER_ORDER = ("con1", "bn1", "dca", "con2", "bn2", "con3", "bn3", "lstm", "fc1", "fc2", "fc_out")


class ModelParams:
    """Ordered mapping of parameter name ("layer.field") to a trainable Tensor"""

    def __init__(self, tensors=None):
        self.tensors = OrderedDict()
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name, value):
        tensor = value if isinstance(value, Tensor) else Tensor(value)
        tensor.requires_grad = True
        tensor.name = name
        self.tensors[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def names(self):
        return list(self.tensors)

    def get(self, name, default=None):
        return self.tensors.get(name, default)

    def zero_grad(self):
        for tensor in self.tensors.values():
            tensor.grad = None

    def to_arrays(self):
        return OrderedDict((name, t.data.copy()) for name, t in self.tensors.items())

    def copy(self):
        return ModelParams(OrderedDict((name, t.data.copy()) for name, t in self.tensors.items()))

    @classmethod
    def from_arrays(cls, arrays, expected_shapes=None):
        """Rebuild params from named arrays, checking shapes against a template when given"""
        if expected_shapes is not None:
            missing = [name for name in expected_shapes if name not in arrays]
            if missing:
                raise FormatError(f"checkpoint is missing parameters {missing}")
            for name, shape in expected_shapes.items():
                if tuple(arrays[name].shape) != tuple(shape):
                    raise FormatError(f"parameter '{name}' has shape {arrays[name].shape}, expected {shape}")
        return cls(OrderedDict((name, np.array(value, dtype=np.float64)) for name, value in arrays.items()))


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config, rng):
    """
    Initialize every weight for a config

    Convolution and FC weights are zero-mean uniform with fan-in scaling, biases
    zero, DCA scalars one, LSTM forget-gate bias one.

    Args:
        config (ModelConfig): Validated config
        rng (np.random.Generator): Source of randomness

    Returns:
        ModelParams: Fresh parameters
    """
    n, h = config.n_regions, config.lstm_hidden
    params = ModelParams()

    params.add("con1.weight", _uniform(rng, (config.c1, 1, n, config.s1), n * config.s1))
    params.add("con1.bias", np.zeros(config.c1))
    params.add("bn1.gamma", np.ones(config.c1))
    params.add("bn1.beta", np.zeros(config.c1))

    if config.dca_enabled:
        for field in ("w_q", "w_k", "w_v"):
            params.add(f"dca.{field}", np.ones(config.c1))
        if config.dca_bias:
            for field in ("b_q", "b_k", "b_v"):
                params.add(f"dca.{field}", np.zeros(config.c1))

    params.add("con2.weight", _uniform(rng, (config.k1, config.c1, n, config.s2), config.c1 * n * config.s2))
    params.add("con2.bias", np.zeros(config.k1))
    params.add("bn2.gamma", np.ones(config.k1))
    params.add("bn2.beta", np.zeros(config.k1))

    params.add("con3.weight", _uniform(rng, (config.k2, config.k1, 1, config.s3), config.k1 * config.s3))
    params.add("con3.bias", np.zeros(config.k2))
    params.add("bn3.gamma", np.ones(config.k2))
    params.add("bn3.beta", np.zeros(config.k2))

    lstm_bias = np.zeros(4 * h)
    lstm_bias[h:2 * h] = 1.0
    params.add("lstm.w_ih", _uniform(rng, (config.k2, 4 * h), h))
    params.add("lstm.w_hh", _uniform(rng, (h, 4 * h), h))
    params.add("lstm.bias", lstm_bias)

    params.add("fc1.weight", _uniform(rng, (h, config.fc1), h))
    params.add("fc1.bias", np.zeros(config.fc1))
    params.add("fc2.weight", _uniform(rng, (config.fc1, config.fc2), config.fc1))
    params.add("fc2.bias", np.zeros(config.fc2))
    params.add("fc_out.weight", _uniform(rng, (config.fc2, config.num_classes), config.fc2))
    params.add("fc_out.bias", np.zeros(config.num_classes))
    return params


def count_parameters(params):
    """
    Exact trainable scalar counts per layer and in total

    Args:
        params (ModelParams | Mapping[str, Tensor]): Parameters

    Returns:
        dict: layer name -> count, plus "total"
    """
    counts = OrderedDict()
    for name, tensor in params.items():
        layer = name.split(".", 1)[0]
        counts[layer] = counts.get(layer, 0) + int(tensor.size)

    ordered = OrderedDict((layer, counts[layer]) for layer in LAYER_ORDER if layer in counts)
    ordered.update((layer, count) for layer, count in counts.items() if layer not in ordered)
    ordered["total"] = sum(counts.values())
    return ordered
