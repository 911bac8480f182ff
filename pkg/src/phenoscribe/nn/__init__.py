from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, restore, save_checkpoint
from .layers import (
    EncoderBlock,
    FeedForward,
    GRUCell,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerEncoder,
    causal_mask,
    gru_step,
    sinusoidal_positions,
)
from .optim import Adam, adam_step
from .tensor import Parameter, Tensor, concat, get_dtype, layer_norm, matmul, no_grad, precision, set_dtype, stack

__all__ = [
    "Adam", "EncoderBlock", "FeedForward", "GRUCell", "LayerNorm", "Linear", "Module", "MultiHeadAttention",
    "Parameter", "Tensor", "TransformerEncoder", "adam_step", "causal_mask", "concat", "decode_checkpoint",
    "encode_checkpoint", "get_dtype", "gru_step", "layer_norm", "load_checkpoint", "matmul", "no_grad",
    "precision", "restore", "save_checkpoint", "set_dtype", "sinusoidal_positions", "stack",
]
