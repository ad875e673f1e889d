"""Verifiable quantized transformer inference.

Exact integer kernels produce witnesses; claims over a challenge point
bind them into a commitment-anchored proof DAG a verifier can replay or
spot-check.
"""

__version__ = "0.1.0"

from .field import DEFAULT_FIELD, Challenge, Field
from .fixedpoint import Direction, QuantConfig, build_exp2_frac_table
from .tensor import QTensor

__all__ = [
    "DEFAULT_FIELD",
    "Challenge",
    "Field",
    "Direction",
    "QuantConfig",
    "QTensor",
    "build_exp2_frac_table",
    "__version__",
]
