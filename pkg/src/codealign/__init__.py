"""Codebook feature alignment for open-set verification.

Features are mapped to their nearest learned codeword and blended with the
original; see :mod:`codealign.bridge`. The remaining modules provide a
synthetic identity world, a trainable affine backbone, the training
objectives, verification metrics and diagnostics.
"""
from codealign.bridge import BlendingCoefficients, Codebook, align, assign
from codealign.errors import (
    CompatibilityError,
    ConfigError,
    NumericError,
    CodeAlignError,
    TrainingError,
)
from codealign.kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BlendingCoefficients",
    "Codebook",
    "CompatibilityError",
    "ConfigError",
    "NumericError",
    "CodeAlignError",
    "TrainingError",
    "align",
    "assign",
]
