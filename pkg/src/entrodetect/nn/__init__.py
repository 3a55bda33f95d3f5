"""Minimal deterministic neural-network kernel (float64, numpy).

Forward/backward pairs for every layer the sequence classifier needs, plus
the finite-difference gradient checker that validates them.
"""

from .attention import attention_pool, attention_pool_backward, attention_pool_forward
from .gradcheck import grad_check, relative_error
from .layers import (
    BatchNormState,
    affine_backward,
    affine_forward,
    batch_norm_backward,
    batch_norm_forward,
    dropout_backward,
    dropout_forward,
    gelu,
    gelu_backward,
    gelu_forward,
    layer_norm_backward,
    layer_norm_forward,
    relu_backward,
    relu_forward,
    sigmoid,
    softmax,
)
from .loss import weighted_cross_entropy
from .lstm import (
    GateParams,
    LstmState,
    bilstm_backward,
    bilstm_forward,
    bilstm_forward_seq,
    lstm_cell_step,
    lstm_layer_backward,
    lstm_layer_forward,
)
from .rng import RngStream
from .tensor import NamedTensor, Parameters

__all__ = [
    "BatchNormState",
    "GateParams",
    "LstmState",
    "NamedTensor",
    "Parameters",
    "RngStream",
    "affine_backward",
    "affine_forward",
    "attention_pool",
    "attention_pool_backward",
    "attention_pool_forward",
    "batch_norm_backward",
    "batch_norm_forward",
    "bilstm_backward",
    "bilstm_forward",
    "bilstm_forward_seq",
    "dropout_backward",
    "dropout_forward",
    "gelu",
    "gelu_backward",
    "gelu_forward",
    "grad_check",
    "layer_norm_backward",
    "layer_norm_forward",
    "lstm_cell_step",
    "lstm_layer_backward",
    "lstm_layer_forward",
    "relative_error",
    "relu_backward",
    "relu_forward",
    "sigmoid",
    "softmax",
    "weighted_cross_entropy",
]
