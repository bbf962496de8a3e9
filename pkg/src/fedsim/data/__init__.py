"""Dataset loading, preprocessing and non-IID client partitioning."""

from .datasets import (
    Dataset,
    Preprocessing,
    channel_stats,
    load_cifar10,
    preprocess,
    preprocess_images,
    synthesize_dataset,
    train_val_split,
)
from .partition import Partition, PartitionSpec, dirichlet_partition
from .serialize import load_dataset, load_partition, save_dataset, save_partition

__all__ = [
    "Dataset",
    "Partition",
    "PartitionSpec",
    "Preprocessing",
    "channel_stats",
    "dirichlet_partition",
    "load_cifar10",
    "load_dataset",
    "load_partition",
    "preprocess",
    "preprocess_images",
    "save_dataset",
    "save_partition",
    "synthesize_dataset",
    "train_val_split",
]
