"""Attention supervision from explanation maps on a synthetic VQA task."""

from ._attn_tutor import (
    ContainerError,
    Dataset,
    TrainingAborted,
    attention_maps,
    default_config,
    emd,
    entropy,
    evaluate,
    generate_dataset,
    grad_cam_maps,
    gradient_suite,
    overlap,
    rank_correlation,
    sinkhorn_emd,
    train,
)

__all__ = [
    "ContainerError",
    "Dataset",
    "TrainingAborted",
    "attention_maps",
    "default_config",
    "emd",
    "entropy",
    "evaluate",
    "generate_dataset",
    "grad_cam_maps",
    "gradient_suite",
    "overlap",
    "rank_correlation",
    "sinkhorn_emd",
    "train",
]
