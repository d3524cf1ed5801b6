"""Minimal reverse-mode autodiff: exactly the operator set the estimation networks need."""

from . import ops
from .gradcheck import grad_check
from .params import (
    ParamStore,
    Scope,
    clip_grad_norm,
    conv_init,
    load_checkpoint,
    save_checkpoint,
    sgd_momentum_step,
)
from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "ops",
    "grad_check",
    "ParamStore",
    "Scope",
    "clip_grad_norm",
    "conv_init",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_momentum_step",
    "Tensor",
    "as_tensor",
    "default_dtype",
    "get_default_dtype",
    "no_grad",
    "set_default_dtype",
]
