"""Frame-stream super-resolution, frame-rate model and latency reporting."""

from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from beamsr.core import SamplingScheme, UsImage, decimate, decimated_lines
from beamsr.errors import DataError, GeometryError
from beamsr.model import SrModel, predict
from beamsr.resample import upsample_cubic

SPEED_OF_SOUND = 1540.0
FRAME_PATTERN = "frame_{:06d}.pgm"


@dataclass(frozen=True)
class AcquisitionModel:
    depth: float
    lines: float
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not (self.c > 0 and self.depth > 0 and self.lines > 0):
            raise DataError("speed of sound, depth and line count must all be positive")


def acquisition_frequency(m: AcquisitionModel) -> float:
    """Frame rate in Hz: one round trip of depth d per line, for l lines."""
    return m.c / (2.0 * m.depth * m.lines)


@dataclass
class LatencyReport:
    frame_ms: list[float]
    config: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.frame_ms)

    def to_json(self) -> dict:
        ms = self.frame_ms
        return {
            "frames": self.count,
            "mean_ms": statistics.fmean(ms) if ms else math.nan,
            "median_ms": statistics.median(ms) if ms else math.nan,
            "max_ms": max(ms) if ms else math.nan,
            "frame_ms": ms,
            "config": self.config,
        }


def _refine(frame: UsImage, scheme: SamplingScheme, model: SrModel, target_lines: int,
            simulate: bool) -> tuple[np.ndarray, float]:
    low = decimate(frame, scheme) if simulate else frame
    start = time.perf_counter()
    up = upsample_cubic(low, scheme, target_lines)
    out = predict(model, up.pixels[None], batch_size=1)[0]
    return out, (time.perf_counter() - start) * 1e3


def process_stream(frames, scheme: SamplingScheme, model: SrModel, *, simulate: bool = True,
                   target_lines: int | None = None, workers: int = 1):
    """Super-resolve an ordered frame sequence.

    With ``simulate`` each full-resolution frame is decimated first; otherwise
    frames are taken as already-acquired low-resolution images and rebuilt to
    ``target_lines`` lines. Output order always matches input order. Latency
    covers up-sampling and the network pass only.
    """
    frames = list(frames)
    model.config.check_scheme(scheme)
    if not frames:
        return [], LatencyReport([], {"scheme": scheme.factor_label, "simulate": simulate})
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise GeometryError(f"frame {i} has shape {f.shape}, stream started with {shape}")
    if simulate:
        target_lines = shape[0]
    elif target_lines is None:
        target_lines = shape[0] * scheme.stride
    elif decimated_lines(target_lines, scheme) != shape[0]:
        raise GeometryError(
            f"inconsistent decimation geometry: {shape[0]} lines cannot rebuild {target_lines}"
        )

    def job(frame):
        return _refine(frame, scheme, model, target_lines, simulate)

    if workers > 1:
        # executor.map yields results in submission order
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, frames))
    else:
        results = [job(f) for f in frames]
    outputs = [UsImage(r[0], district=f.district) for r, f in zip(results, frames)]
    report = LatencyReport(
        [r[1] for r in results],
        {
            "scheme": scheme.factor_label,
            "simulate": simulate,
            "lines": target_lines,
            "depth": shape[1],
            "workers": workers,
            "model": {"blocks": model.config.blocks, "width": model.config.width,
                      "expansion": model.config.expansion, "kernel": model.config.kernel},
        },
    )
    return outputs, report
