"""crackscreen: lightweight attention-augmented CNN crack patch screening.

A small, self-contained stack: numpy autodiff tensors, a residual CNN with
channel+spatial attention, imbalance-aware losses, an inspection-scene
degradation pipeline, training/evaluation tooling, Grad-CAM maps, and a
sliding-window screening pipeline for full-resolution imagery.
"""

__version__ = "0.1.0"

from .tensor import Tensor, finite_diff_check

__all__ = ["Tensor", "finite_diff_check", "__version__"]
