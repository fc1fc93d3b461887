"""Synthetic data, file I/O, training, evaluation and experiment runners."""
from .ablation import AblationReport, run_ablation, run_variant
from .attention_export import attention_scores, export_attention
from .bagio import load_dataset, read_bag, save_dataset, write_bag, write_bag_csv
from .losses import coxph_loss, cross_entropy
from .metrics import auc, c_index, classification_metrics, macro_f1, metrics, survival_metrics
from .optim import AdamW, cosine_lr
from .synthetic import SyntheticSpec, generate_bag, generate_dataset, split_indices
from .train import TrainConfig, TrainResult, evaluate, order_bags, train

__all__ = [
    "AblationReport", "AdamW", "SyntheticSpec", "TrainConfig", "TrainResult", "attention_scores",
    "auc", "c_index", "classification_metrics", "cosine_lr", "coxph_loss", "cross_entropy",
    "evaluate", "export_attention", "generate_bag", "generate_dataset", "load_dataset",
    "macro_f1", "metrics", "order_bags", "read_bag", "run_ablation", "run_variant",
    "save_dataset", "split_indices", "survival_metrics", "train", "write_bag", "write_bag_csv",
]
