"""Semi-supervised multi-head ensembles for blind quality prediction.

Heads are trained by pairwise learning-to-rank with the fidelity loss on
labeled pairs while their disagreement is encouraged on unlabeled pairs.
"""

from .core import (
    binary_preference,
    ensemble_score,
    fidelity_loss,
    std_normal_cdf,
    thurstone_prob,
)
from .data import Dataset, SplitSpec, SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split
from .evaluation import gmad_pairs, plcc_with_logistic, spot_failures, srcc
from .model import ArchitectureConfig, EnsembleParams, forward, init, load_checkpoint, predict, save_checkpoint
from .objectives import (
    ObjectiveConfig,
    accuracy_loss,
    diversity_pairwise,
    diversity_to_ensemble,
    diversity_variance,
    prob_average,
    semi_loss,
)
from .trainer import TrainConfig, train

__version__ = "0.1.0"
