"""Seeded phantom training run used as the desk-scale smoke experiment."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from beamsr.core import SamplingScheme
from beamsr.dataio import PhantomParams, build_dataset, generate_phantoms
from beamsr.model import ModelConfig, model_init
from beamsr.train import Evaluation, LossParams, TrainConfig, TrainHistory, evaluate, fit


@dataclass(frozen=True)
class SmokeConfig:
    phantom: PhantomParams = PhantomParams(seed=0, count=64, lines=64, depth=64)
    stride: int = 2
    blocks: int = 4
    width: int = 8
    train: TrainConfig = TrainConfig(epochs=50, batch_size=8, seed=0)
    split_seed: int = 0
    init_seed: int = 0
    window: int = 10


def window_means(values, window: int) -> list[float]:
    """Means of consecutive non-overlapping windows; a short tail window is kept."""
    values = list(values)
    return [float(np.mean(values[i : i + window])) for i in range(0, len(values), window)]


@dataclass
class SmokeResult:
    history: TrainHistory
    evaluation: Evaluation
    seconds: float
    window: int
    extra: dict = field(default_factory=dict)

    @property
    def smoothed_val_psnr(self) -> list[float]:
        return window_means(self.history.val_psnr, self.window)

    @property
    def trend_non_decreasing(self) -> bool:
        w = self.smoothed_val_psnr
        return all(b >= a for a, b in zip(w, w[1:]))

    def summary(self) -> dict:
        ev = self.evaluation
        return {
            "seconds": self.seconds,
            "best_epoch": self.history.best_epoch,
            "input_val_psnr": self.history.input_val_psnr,
            "val_psnr_windows": self.smoothed_val_psnr,
            "test_median_psnr_input": ev.input_stats["psnr"].median,
            "test_median_psnr_prediction": ev.prediction_stats["psnr"].median,
            "first_bin_input": ev.input_first_bin,
            "first_bin_prediction": ev.prediction_first_bin,
            **self.extra,
        }


def run_smoke(cfg: SmokeConfig = SmokeConfig(), on_epoch=None) -> SmokeResult:
    start = time.perf_counter()
    scheme = SamplingScheme(cfg.stride)
    images = generate_phantoms(cfg.phantom)
    manifest, pairs = build_dataset(images, scheme, seed=cfg.split_seed)
    mcfg = ModelConfig.for_scheme(scheme, blocks=cfg.blocks, width=cfg.width,
                                  norm_mean=manifest.corpus_mean)
    model = model_init(mcfg, seed=cfg.init_seed)
    best, history = fit(model, pairs["train"], pairs["val"], cfg.train, LossParams(scheme),
                        on_epoch=on_epoch)
    ev = evaluate(best, pairs["test"])
    return SmokeResult(history, ev, time.perf_counter() - start, cfg.window,
                       {"split_sizes": {k: len(v) for k, v in pairs.items()}})
