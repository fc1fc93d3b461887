from .memory import MemoryLedger
from .model import (
    STRUCTURES, ModelConfig, ModelParams, chunk_tiles, forward_detail, forward_train, global_stage, init_model,
    load_checkpoint, local_stage, save_checkpoint,
)
from .stream import MemoryRow, forward_stream, iter_row_blocks, peak_memory_report, predict, write_memory_csv

__all__ = [
    "STRUCTURES", "MemoryLedger", "MemoryRow", "ModelConfig", "ModelParams", "chunk_tiles", "forward_detail",
    "forward_stream", "forward_train", "global_stage", "init_model", "iter_row_blocks",
    "load_checkpoint", "local_stage", "peak_memory_report", "predict", "save_checkpoint",
    "write_memory_csv",
]
