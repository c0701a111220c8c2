"""hymir: hybrid CNN / selective-SSM / window-attention image restoration,
built on a from-scratch numpy tensor engine with reverse-mode autodiff."""

from .tensor import (
    GradCheckReport,
    NonFiniteError,
    Tape,
    Tensor,
    as_tensor,
    default_dtype,
    grad_check,
    set_default_dtype,
    using_dtype,
)

__version__ = "0.1.0"

__all__ = [
    "GradCheckReport",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "as_tensor",
    "default_dtype",
    "grad_check",
    "set_default_dtype",
    "using_dtype",
    "__version__",
]
