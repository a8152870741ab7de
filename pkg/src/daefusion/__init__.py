"""Dual-attention segmentation library with a from-scratch autodiff core.

The public surface mirrors the layer structure: ``numerics`` (tensors,
tape, ops, gradient checking), ``attention`` (token and channel kernels),
``blocks`` (dual attention blocks and Mix-FFN), ``architecture`` (the
hierarchical encoder-decoder), ``training`` (losses, SGD, synthetic data,
metrics) and ``cli`` (the ``daefusion`` command).
"""

from .architecture import (ConfigError, Model, ModelConfig, load_checkpoint,
                           param_count, save_checkpoint)
from .attention import (AttentionParams, SccaParams, efficient_attention,
                        init_attention_params, init_scca_params, scca,
                        standard_attention, transpose_attention)
from .blocks import (BlockParams, DualStrategy, TokenMap, dual_block_sequential,
                     dual_block_variant, init_block_params, mix_ffn)
from .numerics import (AllocationLog, GradError, NonFiniteError, ShapeError,
                       Tape, Tensor, grad_check, rng)
from .training import (MetricReport, SegBatch, TrainConfig, ce_loss, dice_loss,
                       evaluate, segmentation_metrics, sgd_step, synth_task,
                       total_loss, train)

__version__ = "0.1.0"

__all__ = [
    "AllocationLog", "AttentionParams", "BlockParams", "ConfigError",
    "DualStrategy", "GradError", "MetricReport", "Model", "ModelConfig",
    "NonFiniteError", "SccaParams", "SegBatch", "ShapeError", "Tape",
    "Tensor", "TokenMap", "TrainConfig", "ce_loss", "dice_loss",
    "dual_block_sequential", "dual_block_variant", "efficient_attention",
    "evaluate", "grad_check", "init_attention_params", "init_block_params",
    "init_scca_params", "load_checkpoint", "mix_ffn", "param_count", "rng",
    "save_checkpoint", "scca", "segmentation_metrics", "sgd_step",
    "standard_attention", "synth_task", "total_loss", "train",
    "transpose_attention", "__version__",
]
