"""Numpy-backed tensors, layers, losses, and the Adam optimizer."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .layers import (
    Conv2d,
    Dense,
    Embedding,
    LayerNorm,
    Parameter,
    ParameterStore,
    global_average_pool,
    max_pool_over_sequence,
    mlp_block,
    multi_head_attention,
)
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    exp,
    gather_rows,
    layer_norm_core,
    log,
    logsumexp,
    matmul,
    max_,
    max_pool2d,
    mean_,
    mul,
    power,
    relu,
    reshape,
    select,
    sigmoid,
    softmax,
    sum_,
    take_along_rows,
    transpose,
)
from .train import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    bce_with_logits,
    classification_loss,
    cross_entropy,
    l2_penalty,
)

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv2d",
    "Dense",
    "Embedding",
    "LayerNorm",
    "Parameter",
    "ParameterStore",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "add",
    "bce_with_logits",
    "classification_loss",
    "concat",
    "conv2d",
    "cross_entropy",
    "exp",
    "finite_difference_check",
    "gather_rows",
    "global_average_pool",
    "l2_penalty",
    "layer_norm_core",
    "load_checkpoint",
    "log",
    "logsumexp",
    "matmul",
    "max_",
    "max_pool2d",
    "max_pool_over_sequence",
    "mean_",
    "mlp_block",
    "mul",
    "multi_head_attention",
    "power",
    "relu",
    "reshape",
    "save_checkpoint",
    "select",
    "sigmoid",
    "softmax",
    "sum_",
    "take_along_rows",
    "transpose",
]
