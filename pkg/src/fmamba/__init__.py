"""FMamba multivariate forecaster on a small numpy autodiff core."""

from .model import FMamba, FMambaConfig, build_variant, model_forward
from .tensor import Parameter, Rng, Tape, Tensor, backward

__all__ = ["FMamba", "FMambaConfig", "build_variant", "model_forward", "Parameter", "Rng", "Tape", "Tensor", "backward"]
__version__ = "0.1.0"
