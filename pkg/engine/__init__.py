"""
Tensor engine: taped float64 tensors, layers, Adam and checkpoints
"""

from engine.tensor import Tensor, backward, get_tape, no_grad

__all__ = ["Tensor", "backward", "get_tape", "no_grad"]
