"""Dynamic-action-space Q-network, its training step and replay memory."""

from .network import (
    AdamState,
    ArchConfig,
    FeatureCache,
    QParams,
    Transition,
    candidate_values,
    checkpoint_bytes,
    checkpoint_from_bytes,
    conv_features,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    loss_and_gradients,
    loss_and_gradients_arrays,
    optimizer_step,
    save_checkpoint,
    sync_target,
    td_targets,
    zero_params,
)
from .replay import ReplayBuffer

__all__ = [
    "AdamState",
    "ArchConfig",
    "FeatureCache",
    "QParams",
    "ReplayBuffer",
    "Transition",
    "candidate_values",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
    "conv_features",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "loss_and_gradients",
    "loss_and_gradients_arrays",
    "optimizer_step",
    "save_checkpoint",
    "sync_target",
    "td_targets",
    "zero_params",
]
