"""Convolutional spiking networks of LIF neurons trained with surrogate gradients."""

from .kernels import BACKEND
from .tensor import Tensor, no_grad, spike_threshold

__version__ = "0.1.0"

__all__ = ["BACKEND", "Tensor", "no_grad", "spike_threshold", "__version__"]
