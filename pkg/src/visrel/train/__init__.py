from .config import TrainConfig, read_config_file, write_config_file
from .data import FrameArrays, load_frame_arrays
from .loop import TrainResult, train_predicates, resume_predicates, finetune_direction

__all__ = [
    "TrainConfig",
    "read_config_file",
    "write_config_file",
    "FrameArrays",
    "load_frame_arrays",
    "TrainResult",
    "train_predicates",
    "resume_predicates",
    "finetune_direction",
]
