"""Masked logarithmic loss, Adam with exponential learning-rate decay, and
the training / evaluation loops."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from beamsr.core import SamplingScheme, check_width
from beamsr.errors import DataError, NumericalDivergence
from beamsr.metrics import (
    FIRST_BIN_WIDTH,
    BoxStats,
    MetricReport,
    abs_error_image,
    box_stats,
    metric_report,
    psnr,
)
from beamsr.model import SrModel, model_backward, model_forward, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossParams:
    scheme: SamplingScheme
    epsilon: float = 1e-4
    k: float = 5.0 / 255.0

    def __post_init__(self):
        if not (0 < self.epsilon < self.k < 1):
            raise DataError(f"loss parameters need 0 < epsilon < k < 1, got {self.epsilon}, {self.k}")


def masked_log_loss(pred, target, params: LossParams) -> tuple[float, np.ndarray]:
    """Mean of ln((|y - y_hat| + eps) / k) over the lines the probe did not acquire.

    Works on (..., L, D) arrays. Returns the loss and its gradient w.r.t.
    ``pred``; acquired lines (index mod s == 0) get exactly zero gradient.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    if pred.ndim < 2:
        raise DataError("loss inputs need (lines, depth) trailing axes")
    lines = pred.shape[-2]
    check_width(lines, params.scheme)
    missing = (np.arange(lines) % params.scheme.stride) != 0
    diff = pred[..., missing, :] - target[..., missing, :]
    err = np.abs(diff)
    n = err.size
    loss = float(np.sum(np.log((err + params.epsilon) / params.k)) / n)
    if not math.isfinite(loss):
        raise NumericalDivergence("numerical divergence: non-finite loss")
    grad = np.zeros_like(pred)
    grad[..., missing, :] = np.sign(diff) / (err + params.epsilon) / n
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be at least 1")
        if not (0 < self.lr_end <= self.lr_start):
            raise DataError("need 0 < lr_end <= lr_start")
        if self.batch_size < 1:
            raise DataError("batch size must be positive")


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Exponential decay from lr_start at epoch 0 to lr_end at the last epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise DataError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr_start
    if epoch == cfg.epochs - 1:
        return cfg.lr_end
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / (cfg.epochs - 1))


class Adam:
    """Adam over a model's parameter arrays with float64 master copies.

    The model arrays (typically float32) are overwritten after every step.
    """

    def __init__(self, params: list[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.master = [p.astype(np.float64) for p in params]
        self.m = [np.zeros_like(p) for p in self.master]
        self.v = [np.zeros_like(p) for p in self.master]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, w, m, v, g in zip(self.params, self.master, self.m, self.v, grads):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            with np.errstate(over="ignore", invalid="ignore"):
                p[...] = w
            if not np.all(np.isfinite(p)):
                raise NumericalDivergence("numerical divergence: parameter overflow")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_psnr: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    input_val_psnr: float = math.nan

    def __len__(self):
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_psnr", "lr"])
            for i, (loss, vp, lr) in enumerate(zip(self.train_loss, self.val_psnr, self.lr)):
                w.writerow([i, f"{loss:.9g}", f"{vp:.9g}", f"{lr:.9g}"])


class TrainingDiverged(NumericalDivergence):
    """Raised by :func:`fit`; carries the best finite checkpoint seen so far."""

    def __init__(self, msg, model: SrModel, history: TrainHistory):
        super().__init__(msg)
        self.model = model
        self.history = history


def _stack(pairs) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([p.input.pixels for p in pairs])[:, None]
    y = np.stack([p.target.pixels for p in pairs])[:, None]
    return x, y


def _batches(pairs, batch_size: int, rng: np.random.Generator) -> list[list]:
    """Shuffled mini-batches; images of different shapes never share a batch."""
    order = rng.permutation(len(pairs))
    buckets: dict[tuple, list] = {}
    for i in order:
        buckets.setdefault(pairs[i].target.shape, []).append(pairs[i])
    out = []
    for items in buckets.values():
        out += [items[j : j + batch_size] for j in range(0, len(items), batch_size)]
    return out


def mean_psnr(model: SrModel, pairs, batch_size: int = 8) -> float:
    vals = []
    for batch in _batches(pairs, batch_size, np.random.default_rng(0)):
        x, y = _stack(batch)
        pred = predict(model, x[:, 0], batch_size)
        vals += [psnr(t, p) for t, p in zip(y[:, 0], pred)]
    return float(np.mean(vals))


def train_step(model: SrModel, opt: Adam, x, y, loss_params: LossParams, lr: float) -> float:
    pred, cache = model_forward(model, x, return_cache=True)
    loss, dpred = masked_log_loss(pred, y, loss_params)
    grads = model_backward(model, x, dpred, cache)
    opt.step(grads.arrays(), lr)
    return loss


def fit(model: SrModel, train_set, val_set, cfg: TrainConfig, loss_params: LossParams,
        on_epoch=None) -> tuple[SrModel, TrainHistory]:
    """Mini-batch Adam on the masked log loss; returns the best-validation weights.

    ``train_set`` and ``val_set`` are sequences of pairs with ``input`` and
    ``target`` images. ``model`` is updated in place during training; the
    returned model is an independent copy of the best checkpoint.
    """
    if not train_set or not val_set:
        raise DataError("training and validation sets must be non-empty")
    model.config.check_scheme(loss_params.scheme)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.arrays(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = TrainHistory()
    history.input_val_psnr = float(np.mean([psnr(p.target, p.input) for p in val_set]))
    best = model.copy()
    best_psnr = -math.inf

    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg, epoch)
        losses, weights = [], []
        try:
            for batch in _batches(train_set, cfg.batch_size, rng):
                x, y = _stack(batch)
                losses.append(train_step(model, opt, x, y, loss_params, lr))
                weights.append(len(batch))
            val = mean_psnr(model, val_set, cfg.batch_size)
        except NumericalDivergence as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", best, history) from exc
        history.train_loss.append(float(np.average(losses, weights=weights)))
        history.val_psnr.append(val)
        history.lr.append(lr)
        if val > best_psnr:
            best_psnr = val
            best = model.copy()
            history.best_epoch = epoch
        log.info("epoch %d lr %.3g loss %.5f val_psnr %.4f", epoch, lr, history.train_loss[-1], val)
        if on_epoch is not None:
            on_epoch(epoch, history)
    return best, history


@dataclass
class ImageEvaluation:
    name: str
    input: MetricReport
    prediction: MetricReport
    max_delta: float  # max |prediction - input|, [0, 1] scale


@dataclass
class Evaluation:
    images: list[ImageEvaluation]
    input_stats: dict[str, BoxStats]
    prediction_stats: dict[str, BoxStats]
    input_first_bin: float
    prediction_first_bin: float

    @property
    def median_psnr_delta(self) -> float:
        return self.prediction_stats["psnr"].median - self.input_stats["psnr"].median

    @property
    def median_psnr_delta_pct(self) -> float:
        base = self.input_stats["psnr"].median
        return 100.0 * self.median_psnr_delta / base if base else math.nan

    @property
    def first_bin_delta_pct(self) -> float:
        """Relative change of the first-bin pixel share, in percent."""
        if self.input_first_bin == 0:
            return math.nan
        return 100.0 * (self.prediction_first_bin - self.input_first_bin) / self.input_first_bin

    def summary(self) -> dict:
        def stats(d):
            return {k: asdict(v) for k, v in d.items()}

        return {
            "n_images": len(self.images),
            "input": stats(self.input_stats),
            "prediction": stats(self.prediction_stats),
            "first_bin": {
                "bin_width": FIRST_BIN_WIDTH,
                "input_fraction": self.input_first_bin,
                "prediction_fraction": self.prediction_first_bin,
                "delta_pct": self.first_bin_delta_pct,
            },
            "deltas": {
                "median_psnr_db": self.median_psnr_delta,
                "median_psnr_pct": self.median_psnr_delta_pct,
                "median_ssim": self.prediction_stats["ssim"].median - self.input_stats["ssim"].median,
                "median_mae": self.prediction_stats["mae"].median - self.input_stats["mae"].median,
            },
            "max_delta_255": max(255.0 * im.max_delta for im in self.images),
        }


def evaluate(model: SrModel, test_set, batch_size: int = 8, predictions=None) -> Evaluation:
    """Paired input/prediction metrics over a test set.

    First-bin fractions pool every pixel of the set, as a corpus histogram does.
    """
    if not test_set:
        raise DataError("empty test set")
    for p in test_set:
        if p.input.shape != p.target.shape:
            raise DataError(f"{p.name}: input {p.input.shape} and target {p.target.shape} differ")
    if predictions is None:
        predictions = [predict(model, p.input.pixels[None], batch_size)[0] for p in test_set]
    images = []
    hist_in = hist_pred = 0
    for p, pred in zip(test_set, predictions):
        r_in = metric_report(p.target, p.input)
        r_pred = metric_report(p.target, pred)
        hist_in = hist_in + r_in.histogram
        hist_pred = hist_pred + r_pred.histogram
        delta = abs_error_image(p.input, pred).max_error
        images.append(ImageEvaluation(p.name, r_in, r_pred, delta))

    def stats(reports):
        return {
            "psnr": box_stats([r.psnr for r in reports]),
            "ssim": box_stats([r.ssim for r in reports]),
            "mae": box_stats([r.mae for r in reports]),
        }

    return Evaluation(
        images,
        stats([im.input for im in images]),
        stats([im.prediction for im in images]),
        float(hist_in[0] / hist_in.sum()),
        float(hist_pred[0] / hist_pred.sum()),
    )
