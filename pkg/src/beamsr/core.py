"""Image and sampling data model, and lateral beamline decimation.

Images are stored line-major: axis 0 indexes lateral beamlines, axis 1 the
axial depth samples along each line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from beamsr.errors import DataError, GeometryError

MIN_SIZE = 4
# decimated acquisitions can be as narrow as two lines
MIN_STORED_LINES = 2

_LABELS = {2: "2X", 4: "4X"}


@dataclass(frozen=True)
class SamplingScheme:
    """Keep every ``stride``-th beamline, starting at line 0."""

    stride: int

    def __post_init__(self):
        if self.stride not in _LABELS:
            raise DataError(f"unsupported stride {self.stride!r}; expected 2 or 4")

    @property
    def factor_label(self) -> str:
        return _LABELS[self.stride]

    @classmethod
    def from_label(cls, label: str) -> "SamplingScheme":
        key = label.strip().upper()
        for stride, name in _LABELS.items():
            if key == name:
                return cls(stride)
        raise DataError(f"unknown scheme label {label!r}; expected 2x or 4x")

    def __str__(self) -> str:
        return self.factor_label


@dataclass(frozen=True, eq=False)
class UsImage:
    """A lines x depth grayscale grid with intensities in [0, 1].

    The pixel array is copied to float64 and made read-only on construction.
    """

    pixels: np.ndarray
    district: str = field(default="", compare=False)

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DataError(f"image must be 2-D (lines, depth), got shape {arr.shape}")
        if arr.shape[0] < MIN_STORED_LINES or arr.shape[1] < 1:
            raise DataError(f"image shape {arr.shape} is degenerate")
        if not np.all(np.isfinite(arr)):
            raise DataError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("pixel values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def lines(self) -> int:
        return self.pixels.shape[0]

    @property
    def depth(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, UsImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))


@dataclass(frozen=True)
class LineMask:
    acquired: np.ndarray

    def __post_init__(self):
        arr = np.array(self.acquired, dtype=bool, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "acquired", arr)

    def __len__(self):
        return len(self.acquired)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.acquired)

    @property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(~self.acquired)


def require_full_size(img: UsImage) -> None:
    """Full-resolution images entering the pipeline need L, D >= 4."""
    if img.lines < MIN_SIZE or img.depth < MIN_SIZE:
        raise GeometryError(f"image {img.shape} smaller than {MIN_SIZE}x{MIN_SIZE}")


def check_width(lines: int, scheme: SamplingScheme) -> None:
    """Every scheme needs at least two acquired lines, i.e. more than ``stride`` lines."""
    if lines <= scheme.stride:
        raise GeometryError(
            f"image too narrow for scheme {scheme}: {lines} lines give fewer than 2 acquired"
        )


def line_mask(lines: int, scheme: SamplingScheme) -> LineMask:
    check_width(lines, scheme)
    return LineMask(np.arange(lines) % scheme.stride == 0)


def decimated_lines(lines: int, scheme: SamplingScheme) -> int:
    return math.ceil(lines / scheme.stride)


def decimate(img: UsImage, scheme: SamplingScheme) -> UsImage:
    """Keep lines 0, s, 2s, ... of ``img``; depth is untouched."""
    require_full_size(img)
    check_width(img.lines, scheme)
    return UsImage(img.pixels[:: scheme.stride], district=img.district)
