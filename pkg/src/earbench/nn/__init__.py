from .arch import (
    ArchSpec, LayerSpec, PRESETS, mini_alexnet, mini_squeezenet, mini_vgg,
)
from .gradcheck import grad_check
from .model import (
    FREEZE_POLICIES, Model, apply_freeze_policy, backward, build_model,
    forward, load_checkpoint, parameter_count, save_checkpoint, sgd_step,
)
from .train import Schedule, TrainingLog, accuracy, train

__all__ = [
    "ArchSpec", "LayerSpec", "PRESETS", "mini_alexnet", "mini_squeezenet",
    "mini_vgg", "grad_check", "FREEZE_POLICIES", "Model", "apply_freeze_policy",
    "backward", "build_model", "forward", "load_checkpoint", "parameter_count",
    "save_checkpoint", "sgd_step", "Schedule", "TrainingLog", "accuracy",
    "train",
]
