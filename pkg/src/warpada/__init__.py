"""warpada: adversarial data augmentation for univariate time series.

The package couples a small reverse-mode autodiff engine with a
frequency-domain time-warping layer, so both additive perturbations and
smooth temporal distortions can be optimized against a classifier and fed
back into training.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, finite_diff_check

__all__ = ["Tensor", "Tape", "finite_diff_check", "__version__"]
