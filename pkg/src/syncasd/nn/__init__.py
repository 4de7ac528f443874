"""Minimal differentiable-computation core."""

from .autograd import DimensionError, Param, Tensor, no_grad
from .gradcheck import grad_check
from .layers import AttentionParams, attention, bce_with_logits, sinusoidal_pe
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "AttentionParams",
    "DimensionError",
    "Param",
    "Tensor",
    "adam_step",
    "attention",
    "bce_with_logits",
    "grad_check",
    "no_grad",
    "sinusoidal_pe",
]
