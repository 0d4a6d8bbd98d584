"""Continual operator learning with gated wavelet-expert networks.

Subpackages: a small autodiff tensor engine (`tensor`, `optim`), multilevel
Daubechies wavelet transforms (`wavelet`), the gated expert architecture
(`model`), training/transfer/rollout machinery (`continual`), synthetic PDE
data generation (`grf`, `solvers`, `dataset`), checkpointing, and a CLI.
"""

__version__ = "0.1.0"

from .continual import (SemanticMemory, TrainConfig, RolloutSpec, accuracy_metric,
                        activate_task, combinatorial_transfer, cosine_similarity,
                        relative_l2, rollout, train_foundation)
from .dataset import TaskDataset, build_dataset, load_dataset, save_dataset
from .grf import GrfSpec, sample_grf, square_wave_ic
from .model import GatedWaveletOperator, ModelConfig
from .solvers import PdeSpec, solve
from .tensor import Tensor
from .wavelet import FilterBank, WaveletCoeffs, coeff_length, daubechies_filters, \
    dwt_multilevel, idwt_multilevel

__all__ = [
    "__version__", "Tensor", "FilterBank", "WaveletCoeffs", "coeff_length",
    "daubechies_filters", "dwt_multilevel", "idwt_multilevel", "ModelConfig",
    "GatedWaveletOperator", "GrfSpec", "sample_grf", "square_wave_ic", "PdeSpec",
    "solve", "TaskDataset", "build_dataset", "save_dataset", "load_dataset",
    "SemanticMemory", "TrainConfig", "RolloutSpec", "relative_l2",
    "accuracy_metric", "cosine_similarity", "train_foundation",
    "combinatorial_transfer", "activate_task", "rollout",
]
