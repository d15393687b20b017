"""Multi-task liver phantom toolkit.

A desk-scale numerical implementation of a dual-domain multi-task network:
tumor segmentation, dynamic-enhancement regression and lesion classification
from four-phase dynamic images, trained on synthetic contrast-kinetics
phantoms.  Everything runs on numpy float64 with a tape-based reverse-mode
autodiff core; optional compiled kernels accelerate the convolution hot
paths (select with the MTLIVER_KERNELS environment variable).
"""

__version__ = "0.1.0"

from .errors import (CompatibilityError, ConfigError, ContractError,
                     FormatError, NumericalError, ShapeError)
from .losses import LossWeights
from .model import ModelConfig, MultiTaskModel, SequenceDiscriminator
from .phantom import (PhantomConfig, Sample, generate_dataset, kfold_split,
                      load_dataset)
from .tensor import Tensor, backward
from .training import (TrainConfig, cross_validate, evaluate, load_checkpoint,
                       run_ablation, run_synergy, save_checkpoint, train_on)

__all__ = [
    "__version__",
    "CompatibilityError", "ConfigError", "ContractError", "FormatError",
    "NumericalError", "ShapeError",
    "LossWeights", "ModelConfig", "MultiTaskModel", "SequenceDiscriminator",
    "PhantomConfig", "Sample", "generate_dataset", "kfold_split",
    "load_dataset",
    "Tensor", "backward",
    "TrainConfig", "cross_validate", "evaluate", "load_checkpoint",
    "run_ablation", "run_synergy", "save_checkpoint", "train_on",
]
