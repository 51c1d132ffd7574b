"""Salient-object transformer components on a small numpy autograd core."""

from .attention import ForegroundMask, TaskTokens, prepare_mask, sia_block
from .complexity import closed_form_attention_cost, closed_form_model_macs, counted_forward, savings_report
from .geometry import ENCODER_SCHEDULE, RT2T_SCHEDULE, SoftSplitSpec, TokenSeq, rt2t_fold, soft_split
from .model import LEVELS, ModelConfig, PredictionSet, VSTModel
from .objectives import GroundTruth, boundary_gt, mae, max_f, total_loss
from .tensor import Param, Tensor, backward, gradients, no_grad

__all__ = [
    "ENCODER_SCHEDULE",
    "RT2T_SCHEDULE",
    "LEVELS",
    "ForegroundMask",
    "GroundTruth",
    "ModelConfig",
    "Param",
    "PredictionSet",
    "SoftSplitSpec",
    "TaskTokens",
    "Tensor",
    "TokenSeq",
    "VSTModel",
    "backward",
    "boundary_gt",
    "closed_form_attention_cost",
    "closed_form_model_macs",
    "counted_forward",
    "gradients",
    "mae",
    "max_f",
    "no_grad",
    "prepare_mask",
    "rt2t_fold",
    "savings_report",
    "sia_block",
    "soft_split",
    "total_loss",
]
