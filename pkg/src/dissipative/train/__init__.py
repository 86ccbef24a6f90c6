from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)
from .config import BUILTIN_CONFIGS, TrainConfig, builtin_config, load_config, save_config
from .data import PointCloud, make_circle, make_scurve, nearest_distance, uniform_cloud
from .loop import Adam, History, TrainingDiverged, builtin_data, total_loss, train

__all__ = [
    "Adam",
    "BUILTIN_CONFIGS",
    "Checkpoint",
    "CheckpointError",
    "CheckpointVersionError",
    "History",
    "PointCloud",
    "TrainConfig",
    "TrainingDiverged",
    "builtin_config",
    "builtin_data",
    "load_checkpoint",
    "load_config",
    "make_circle",
    "make_scurve",
    "nearest_distance",
    "save_checkpoint",
    "save_config",
    "total_loss",
    "train",
    "uniform_cloud",
]
