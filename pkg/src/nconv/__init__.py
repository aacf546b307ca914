"""Normalized convolution for confidence-equipped sparse signals."""

from ._backend import BACKEND
from .layer import ConfSignal, NConvLayer, NonNegFn, nconv_backward, nconv_forward

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfSignal",
    "NConvLayer",
    "NonNegFn",
    "nconv_backward",
    "nconv_forward",
]
