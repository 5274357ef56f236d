"""High-order mixed-moment embedding loss for self-supervised learning, in numpy."""

__version__ = "0.1.0"

from .embedding import EmbeddingBatch, NormalizedBatch, normalize, normalize_backward
from .loss import LossConfig, LossValue, home_loss, invariance_term, redundancy_term
from .moments import MomentSpec, Sampled, count_combinations, moment_report
from .variants import VARIANTS, build_plan

__all__ = [
    "__version__", "EmbeddingBatch", "NormalizedBatch", "normalize", "normalize_backward",
    "LossConfig", "LossValue", "home_loss", "invariance_term", "redundancy_term",
    "MomentSpec", "Sampled", "count_combinations", "moment_report", "VARIANTS", "build_plan",
]
