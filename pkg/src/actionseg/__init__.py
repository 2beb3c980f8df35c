"""Multi-modal action segmentation toolkit: sinusoidal joint encoding, a
graph encoder-decoder over skeleton and object motion fused with low-rate
visual features, SmoothLabelMix augmentation, and segmental evaluation."""

from .tensor import Tensor, backward, grad_check

__all__ = ["Tensor", "backward", "grad_check"]
__version__ = "0.1.0"
