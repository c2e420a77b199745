"""Data, training, evaluation, metrics, checkpoints and the command line."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, default_data_dir, gen_synthetic, load_cifar10, read_cifar_file, write_cifar_file
from .evaluate import (
    BASELINE, JOINT_FIXED, MODES, TTT, TTT_ONLINE, EvalRecord, LinearFit, correlate, error_rate, evaluate,
    sliding_window_accuracy, ssl_descent_fraction, stream_order,
)
from .train import TrainConfig, TrainingDiverged, train_joint

__all__ = [
    "BASELINE", "JOINT_FIXED", "MODES", "TTT", "TTT_ONLINE", "Checkpoint", "Dataset", "EvalRecord", "LinearFit",
    "TrainConfig", "TrainingDiverged", "correlate", "default_data_dir", "error_rate", "evaluate", "gen_synthetic",
    "load_checkpoint", "load_cifar10", "read_cifar_file", "save_checkpoint", "sliding_window_accuracy",
    "ssl_descent_fraction", "stream_order", "train_joint", "write_cifar_file",
]
