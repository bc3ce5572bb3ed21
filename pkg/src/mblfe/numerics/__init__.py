from . import functional, tape
from .checkpoint import CheckpointError, read_container, write_container
from .functional import log_sigmoid, logsumexp, sigmoid, softmax, softplus, tanh_act
from .gradcheck import grad_check, relative_error
from .params import (AdamState, ConfigError, ParamStore, adam_step, init_normal,
                     init_xavier_uniform, init_zeros)
from .tape import Node, Tape, TapeError, backward

__all__ = [
    "AdamState", "CheckpointError", "ConfigError", "Node", "ParamStore", "Tape", "TapeError",
    "adam_step", "backward", "functional", "grad_check", "init_normal", "init_xavier_uniform",
    "init_zeros", "log_sigmoid", "logsumexp", "read_container", "relative_error", "sigmoid",
    "softmax", "softplus", "tanh_act", "tape", "write_container",
]
