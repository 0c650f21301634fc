"""Image quality metrics and corpus statistics.

All metrics take the high-resolution target first. SSIM is the global
(single-window) form built from whole-image means, deviations and covariance.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from beamsr.errors import DataError

FIRST_BIN_WIDTH = 5.0 / 255.0


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    b = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"incomparable images: shapes {a.shape} and {b.shape}")
    return a, b


@dataclass(frozen=True)
class SsimConstants:
    c1: float = 0.01**2
    c2: float = 0.03**2
    c3: float = 0.03**2 / 2

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) <= 0:
            raise DataError("SSIM constants must be strictly positive")


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(target, other) -> float:
    """10 log10(max(target)^2 / MSE); +inf for identical images.

    The peak is the target's own maximum, not a fixed dynamic range. An
    all-zero target with nonzero error gives -inf.
    """
    a, b = _pair(target, other)
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    peak = float(a.max())
    if peak <= 0.0:
        return -math.inf
    return 10.0 * math.log10(peak * peak / err)


def ssim(a, b, c: SsimConstants = SsimConstants()) -> float:
    a, b = _pair(a, b)
    if a.size < 2:
        raise DataError("SSIM needs at least two pixels")
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a = float(np.mean(da * da))
    var_b = float(np.mean(db * db))
    cov = float(np.mean(da * db))
    # sqrt(v*v) == v exactly in binary floating point, so ssim(A, A) == 1
    sd_ab = math.sqrt(var_a * var_b)
    lum = (2 * mu_a * mu_b + c.c1) / (mu_a * mu_a + mu_b * mu_b + c.c1)
    con = (2 * sd_ab + c.c2) / (var_a + var_b + c.c2)
    struct = (cov + c.c3) / (sd_ab + c.c3)
    return float(lum * con * struct)


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class ErrorImage:
    grid: np.ndarray
    max_error: float

    @property
    def max_error_255(self) -> float:
        return self.max_error * 255.0


def abs_error_image(a, b) -> ErrorImage:
    a, b = _pair(a, b)
    grid = np.abs(a - b)
    return ErrorImage(grid, float(grid.max()))


def error_histogram(a, b, bin_width: float = FIRST_BIN_WIDTH) -> np.ndarray:
    """Counts of |a - b| in [k w, (k+1) w); the last bin is closed at 1."""
    if not bin_width > 0:
        raise DataError(f"bin width must be positive, got {bin_width}")
    a, b = _pair(a, b)
    err = np.abs(a - b).ravel()
    nbins = max(1, math.ceil(1.0 / bin_width - 1e-9))
    idx = np.minimum(np.floor(err / bin_width).astype(np.int64), nbins - 1)
    return np.bincount(idx, minlength=nbins)


def first_bin_fraction(a, b, bin_width: float = FIRST_BIN_WIDTH) -> float:
    counts = error_histogram(a, b, bin_width)
    return float(counts[0] / counts.sum())


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    mae: float
    histogram: np.ndarray

    @property
    def first_bin_fraction(self) -> float:
        return float(self.histogram[0] / self.histogram.sum())


def metric_report(target, other, c: SsimConstants = SsimConstants(),
                  bin_width: float = FIRST_BIN_WIDTH) -> MetricReport:
    return MetricReport(
        psnr=psnr(target, other),
        ssim=ssim(target, other, c),
        mae=mae(target, other),
        histogram=error_histogram(target, other, bin_width),
    )


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def box_stats(values) -> BoxStats:
    """Quartiles by linear interpolation between order statistics.

    Whiskers sit at the most extreme samples within 1.5 IQR of the quartiles.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise DataError("box statistics of an empty sample")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    if inside.size == 0:
        inside = x
    return BoxStats(
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(min(inside.min(), q1)),
        whisker_high=float(max(inside.max(), q3)),
        n=int(x.size),
    )
