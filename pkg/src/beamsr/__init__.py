"""Beamline super-resolution for ultrasound-style images and frame streams."""

from beamsr.core import LineMask, SamplingScheme, UsImage, decimate, line_mask
from beamsr.resample import (
    KernelParams,
    keys_kernel,
    upsample_cubic,
    upsample_linear,
    upsample_nearest,
)

__all__ = [
    "KernelParams",
    "LineMask",
    "SamplingScheme",
    "UsImage",
    "decimate",
    "keys_kernel",
    "line_mask",
    "upsample_cubic",
    "upsample_linear",
    "upsample_nearest",
]

__version__ = "0.1.0"
