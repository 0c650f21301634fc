"""Lateral up-sampling of decimated acquisitions.

Missing beamlines are rebuilt independently per depth sample. Cubic
convolution (Keys kernel) is the main up-sampler; nearest and linear exist
as comparison baselines and share the same geometry contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from beamsr.core import SamplingScheme, UsImage, check_width, decimated_lines
from beamsr.errors import DataError, GeometryError


@dataclass(frozen=True)
class KernelParams:
    a: float = -0.5

    def __post_init__(self):
        if not self.a < 0:
            raise DataError(f"cubic kernel parameter must be negative, got {self.a}")


DEFAULT_KERNEL = KernelParams()


def keys_kernel(x, params: KernelParams = DEFAULT_KERNEL):
    """Cubic-convolution weight at offset ``x`` (scalar or array)."""
    a = params.a
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    inner = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    outer = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    w = np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))
    return float(w) if w.ndim == 0 else w


def _check_geometry(low: UsImage, scheme: SamplingScheme, target_lines: int) -> None:
    check_width(target_lines, scheme)
    expected = decimated_lines(target_lines, scheme)
    if low.lines != expected:
        raise GeometryError(
            f"inconsistent decimation geometry: {low.lines} acquired lines cannot "
            f"rebuild {target_lines} lines at stride {scheme.stride} (expected {expected})"
        )


def _pad_extrapolated(samples: np.ndarray) -> np.ndarray:
    """Add one virtual line before and two after the acquired lines.

    Uses f(-1) = 3f(0) - 3f(1) + f(2), which is exact for quadratics, and the
    mirror rule at the right edge. With only two acquired lines the rule
    degrades to linear extrapolation.
    """
    n = samples.shape[0]
    out = np.empty((n + 3,) + samples.shape[1:], dtype=np.float64)
    out[1 : n + 1] = samples
    if n >= 3:
        out[0] = 3.0 * samples[0] - 3.0 * samples[1] + samples[2]
        out[n + 1] = 3.0 * samples[n - 1] - 3.0 * samples[n - 2] + samples[n - 3]
        out[n + 2] = 3.0 * out[n + 1] - 3.0 * samples[n - 1] + samples[n - 2]
    else:
        out[0] = 2.0 * samples[0] - samples[1]
        out[n + 1] = 2.0 * samples[n - 1] - samples[n - 2]
        out[n + 2] = 2.0 * out[n + 1] - samples[n - 1]
    return out


def cubic_lines(samples: np.ndarray, stride: int, target_lines: int,
                params: KernelParams = DEFAULT_KERNEL) -> np.ndarray:
    """Unclamped cubic-convolution reconstruction along axis 0."""
    padded = _pad_extrapolated(np.asarray(samples, dtype=np.float64))
    pos = np.arange(target_lines) / stride
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    out = np.zeros((target_lines,) + padded.shape[1:], dtype=np.float64)
    # padded index of sample j is j + 1
    for offset in (-1, 0, 1, 2):
        w = keys_kernel(frac - offset, params)
        out += w.reshape((-1,) + (1,) * (padded.ndim - 1)) * padded[base + offset + 1]
    acquired = np.arange(0, target_lines, stride)
    # exact pass-through: W(0)=1 and the other taps vanish, but skip the float sum
    out[acquired] = samples[: len(acquired)]
    return out


def upsample_cubic(low: UsImage, scheme: SamplingScheme, target_lines: int,
                   params: KernelParams = DEFAULT_KERNEL) -> UsImage:
    _check_geometry(low, scheme, target_lines)
    out = cubic_lines(low.pixels, scheme.stride, target_lines, params)
    return UsImage(np.clip(out, 0.0, 1.0), district=low.district)


def upsample_nearest(low: UsImage, scheme: SamplingScheme, target_lines: int) -> UsImage:
    """Copy the closest acquired line; ties go to the left neighbour."""
    _check_geometry(low, scheme, target_lines)
    s = scheme.stride
    idx = (np.arange(target_lines) + (s - 1) // 2) // s
    idx = np.minimum(idx, low.lines - 1)
    return UsImage(low.pixels[idx], district=low.district)


def upsample_linear(low: UsImage, scheme: SamplingScheme, target_lines: int) -> UsImage:
    """Blend the two bracketing acquired lines; trailing lines extrapolate linearly."""
    _check_geometry(low, scheme, target_lines)
    s = scheme.stride
    pos = np.arange(target_lines) / s
    left = np.minimum(np.floor(pos).astype(np.int64), low.lines - 2)
    t = (pos - left)[:, None]
    src = low.pixels
    out = (1.0 - t) * src[left] + t * src[left + 1]
    return UsImage(np.clip(out, 0.0, 1.0), district=low.district)


UPSAMPLERS = {
    "cubic": upsample_cubic,
    "nearest": upsample_nearest,
    "linear": upsample_linear,
}
