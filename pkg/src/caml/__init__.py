"""Collaborative multi-agent, multi-modality learning with teacher-student distillation.

The package is organised bottom-up:

- ``tensor``: reverse-mode autodiff over float64 numpy arrays
- ``nn``: layers, attention, losses, Adam and the cosine schedule
- ``world``: an occluded multi-agent gridworld with an oracle expert
- ``data``: tokenised, array-backed episode datasets
- ``models``: encoders and the fusion variants
- ``train``: behaviour cloning and distillation loops
- ``comms``: message planning and cost accounting
- ``info``: exact mutual information on joint tables
- ``metrics``, ``experiment``, ``io``, ``cli``: evaluation, orchestration, persistence
"""

from .tensor import Tensor, backward, no_grad
from .world import Modality, WorldConfig, generate_episode
from .models import ModalityMask, ModelSpec, Task, Variant, FusionModel
from .nn import DistillConfig
from .train import TrainConfig, distill_student, train_bc_baseline, train_teacher

__all__ = [
    "Tensor", "backward", "no_grad",
    "Modality", "WorldConfig", "generate_episode",
    "ModalityMask", "ModelSpec", "Task", "Variant", "FusionModel",
    "DistillConfig", "TrainConfig", "train_teacher", "distill_student", "train_bc_baseline",
]
