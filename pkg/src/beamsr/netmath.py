"""Weight-normalized 2-D convolution and ReLU with hand-derived gradients.

Tensors are plain numpy arrays laid out (batch, channels, lines, depth).
Every reduction runs in float64 whatever the storage dtype of the
parameters, so finite-difference checks stay well above rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from beamsr.errors import DataError, NumericalDivergence


@dataclass
class ConvParams:
    """Convolution weight reparameterized as ``g * v / ||v||`` per output channel."""

    v: np.ndarray  # (out_ch, in_ch, k, k)
    g: np.ndarray  # (out_ch,)
    b: np.ndarray  # (out_ch,)

    def __post_init__(self):
        if self.v.ndim != 4 or self.v.shape[2] != self.v.shape[3]:
            raise DataError(f"direction tensor must be (out, in, k, k), got {self.v.shape}")
        if self.kernel % 2 == 0:
            raise DataError(f"kernel size must be odd, got {self.kernel}")
        out_ch = self.v.shape[0]
        if self.g.shape != (out_ch,) or self.b.shape != (out_ch,):
            raise DataError("gain and bias must have one entry per output channel")

    @property
    def kernel(self) -> int:
        return self.v.shape[2]

    @property
    def in_channels(self) -> int:
        return self.v.shape[1]

    @property
    def out_channels(self) -> int:
        return self.v.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.v, self.g, self.b

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.v.astype(dtype), self.g.astype(dtype), self.b.astype(dtype))

    def copy(self) -> "ConvParams":
        return ConvParams(self.v.copy(), self.g.copy(), self.b.copy())


@dataclass
class ConvGrads:
    v: np.ndarray
    g: np.ndarray
    b: np.ndarray

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.v, self.g, self.b


def direction_norm(v: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(np.asarray(v, dtype=np.float64) ** 2, axis=(1, 2, 3)))
    if np.any(norm <= 0.0):
        raise DataError("zero-norm weight direction")
    return norm


def weight_materialize(p: ConvParams) -> np.ndarray:
    v = np.asarray(p.v, dtype=np.float64)
    scale = np.asarray(p.g, dtype=np.float64) / direction_norm(v)
    return v * scale[:, None, None, None]


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalDivergence(f"numerical divergence: non-finite values entering {where}")


def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """'Same' zero-padded cross-correlation, float64, no bias."""
    k = w.shape[2]
    pad = k // 2
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # (n, c, h, w, k, k)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (n, h, w, o)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DataError(f"expected a (batch, channel, lines, depth) tensor, got {x.shape}")
    if x.shape[1] != p.in_channels:
        raise DataError(f"channel mismatch: input has {x.shape[1]}, layer expects {p.in_channels}")
    _check_finite(x, "convolution")
    w = weight_materialize(p)
    out = _correlate(x, w)
    out += np.asarray(p.b, dtype=np.float64)[None, :, None, None]
    return out


def conv2d_backward(x: np.ndarray, p: ConvParams, upstream: np.ndarray) -> tuple[ConvGrads, np.ndarray]:
    """Gradients w.r.t. (v, g, b) and the layer input, given dLoss/dOutput."""
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(upstream, dtype=np.float64)
    if dy.shape != (x.shape[0], p.out_channels) + x.shape[2:]:
        raise DataError(f"upstream gradient shape {dy.shape} does not match the forward output")
    k = p.kernel
    pad = k // 2
    v = np.asarray(p.v, dtype=np.float64)
    g = np.asarray(p.g, dtype=np.float64)
    norm = direction_norm(v)
    w = v * (g / norm)[:, None, None, None]

    db = dy.sum(axis=(0, 2, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # (o, c, k, k)

    # weight norm: dg = <dW, v/|v|>, dv = g/|v| (dW - dg v/|v|)
    vhat = v / norm[:, None, None, None]
    dg = np.sum(dw * vhat, axis=(1, 2, 3))
    dv = (g / norm)[:, None, None, None] * (dw - dg[:, None, None, None] * vhat)

    # input gradient is a correlation of dy with the flipped, transposed kernel
    dx = _correlate(dy, w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return ConvGrads(dv, dg, db), dx


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, upstream, 0.0)
