"""Robust losses combined with consistency-regularized augmentation for noisy-label training."""
from .augment import AugmentPolicy, AugmentedTuple, augment_tuple, noaug_tuple
from .losses import LossSpec, augloss_objective, js_consistency, loss_gradient
from .model import TrainConfig, forward, train

__version__ = "0.1.0"
