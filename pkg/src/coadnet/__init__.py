"""Co-saliency detection with group attention, on a small numpy autograd engine."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SynthSpec, generate, load_dataset, load_group, write_maps
from .metrics import evaluate, f_measure, mae, pr_curve, s_measure
from .model import AblationFlags, CoADNet, ModelConfig, forward_group, joint_loss, preset
from .tensor import Tensor, backward, no_grad
from .train import TrainSchedule, predict, train

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "CoADNet", "ModelConfig", "SynthSpec", "Tensor", "TrainSchedule",
    "backward", "evaluate", "f_measure", "forward_group", "generate", "joint_loss",
    "load_checkpoint", "load_dataset", "load_group", "mae", "no_grad", "pr_curve",
    "predict", "preset", "s_measure", "save_checkpoint", "train", "write_maps",
]
