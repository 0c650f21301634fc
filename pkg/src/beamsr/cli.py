"""Command-line entry point: ``beamsr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
Diagnostics go to stderr; machine-readable results go to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from beamsr.core import SamplingScheme, UsImage, decimate
from beamsr.dataio import (
    DatasetManifest,
    PhantomParams,
    build_dataset,
    generate_phantoms,
    load_directory,
    load_image,
    load_pairs,
    read_sidecar,
    save_image,
    write_dataset,
)
from beamsr.errors import DataError, NumericalDivergence, SchemeMismatch
from beamsr.metrics import abs_error_image, mae, psnr, ssim
from beamsr.model import ModelConfig, model_init, model_load, model_save, predict
from beamsr.resample import UPSAMPLERS, upsample_cubic
from beamsr.train import LossParams, TrainConfig, TrainingDiverged, evaluate, fit
from beamsr.video import FRAME_PATTERN, AcquisitionModel, acquisition_frequency, process_stream

log = logging.getLogger("beamsr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _scheme(text: str) -> SamplingScheme:
    try:
        return SamplingScheme.from_label(text)
    except DataError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def _json_safe(obj):
    """Replace non-finite floats by strings so output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(payload), indent=2, allow_nan=False) + "\n")


def cmd_phantom(args) -> int:
    params = PhantomParams(seed=args.seed, count=args.count, lines=args.lines, depth=args.depth,
                           district=args.district)
    out = Path(args.out)
    for i, img in enumerate(generate_phantoms(params)):
        save_image(img, out / f"phantom_{i:05d}.pgm", stage="target")
    log.info("wrote %d phantoms to %s", params.count, out)
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    names, images = load_directory(args.inp)
    manifest, pairs = build_dataset(images, args.scheme, tuple(args.ratios), args.seed, names,
                                    district=args.district)
    path = write_dataset(manifest, pairs, args.out)
    sizes = {k: len(v) for k, v in pairs.items()}
    log.info("manifest %s: %s", path, sizes)
    return EXIT_OK


_MODEL_KEYS = {"blocks", "width", "expansion", "conv_layers", "kernels_per_layer"}
_LOSS_KEYS = {"epsilon", "k"}


def _section(raw: dict, name: str, allowed: set) -> dict:
    section = raw.get(name, {})
    if not isinstance(section, dict):
        raise DataError(f"config section {name!r} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise DataError(f"unknown {name} config keys: {sorted(unknown)}")
    return section


def _load_config(path) -> tuple[dict, TrainConfig, dict, int]:
    raw = json.loads(Path(path).read_text()) if path else {}
    train_kw = _section(raw, "train", {f.name for f in fields(TrainConfig)})
    return (_section(raw, "model", _MODEL_KEYS), TrainConfig(**train_kw),
            _section(raw, "loss", _LOSS_KEYS), int(raw.get("init_seed", 0)))


def cmd_train(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    model_kw, train_cfg, loss_kw, init_seed = _load_config(args.config)
    if args.epochs is not None:
        train_cfg = TrainConfig(**{**asdict(train_cfg), "epochs": args.epochs})
    cfg = ModelConfig.for_scheme(manifest.scheme, norm_mean=manifest.corpus_mean, **model_kw)
    train_set = load_pairs(manifest, "train")
    val_set = load_pairs(manifest, "val")
    model = model_init(cfg, seed=init_seed)
    try:
        best, history = fit(model, train_set, val_set, train_cfg,
                            LossParams(manifest.scheme, **loss_kw))
    except TrainingDiverged as exc:
        model_save(exc.model, args.out_model)
        if args.history:
            exc.history.write_csv(args.history)
        raise
    model_save(best, args.out_model)
    if args.history:
        history.write_csv(args.history)
    log.info("best epoch %d, validation PSNR %.4f dB (inputs %.4f dB)", history.best_epoch,
             history.val_psnr[history.best_epoch], history.input_val_psnr)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = model_load(args.model)
    scheme = model.config.scheme()
    img = load_image(args.inp)
    meta = read_sidecar(args.inp)
    if "scheme" in meta:
        declared = SamplingScheme.from_label(meta["scheme"])
        if declared != scheme:
            raise SchemeMismatch(
                f"scheme mismatch: input was built for {declared}, model serves {scheme}"
            )
    stage = meta.get("stage", "target")
    if stage == "upsampled":
        up = img
    elif stage == "lowres":
        lines = int(meta.get("target_lines", img.lines * scheme.stride))
        up = upsample_cubic(img, scheme, lines)
    elif stage == "target":
        up = upsample_cubic(decimate(img, scheme), scheme, img.lines)
    else:
        raise DataError(f"unknown sidecar stage {stage!r}")
    out = predict(model, up.pixels[None])[0]
    save_image(UsImage(out, district=img.district), args.out, stage="prediction",
               scheme=scheme.factor_label)
    return EXIT_OK


def _baseline_table(pairs, scheme: SamplingScheme) -> dict:
    """Mean PSNR/SSIM/MAE of every up-sampler against the targets."""
    table = {}
    for name, fn in UPSAMPLERS.items():
        rows = []
        for p in pairs:
            rec = fn(decimate(p.target, scheme), scheme, p.target.lines)
            rows.append((psnr(p.target, rec), ssim(p.target, rec), mae(p.target, rec)))
        arr = np.array(rows)
        table[name] = {"psnr_mean": float(arr[:, 0].mean()), "ssim_mean": float(arr[:, 1].mean()),
                       "mae_mean": float(arr[:, 2].mean())}
    return table


def cmd_evaluate(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    model = model_load(args.model, scheme=manifest.scheme)
    pairs = load_pairs(manifest, args.split)
    if not pairs:
        raise DataError(f"split {args.split!r} is empty")
    preds = [predict(model, p.input.pixels[None])[0] for p in pairs]
    ev = evaluate(model, pairs, predictions=preds)
    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "per_image.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "psnr_input", "psnr_prediction", "ssim_input", "ssim_prediction",
                    "mae_input", "mae_prediction", "first_bin_input", "first_bin_prediction",
                    "max_delta_255"])
        for im in ev.images:
            w.writerow([im.name, _fmt(im.input.psnr), _fmt(im.prediction.psnr),
                        _fmt(im.input.ssim), _fmt(im.prediction.ssim),
                        _fmt(im.input.mae), _fmt(im.prediction.mae),
                        _fmt(im.input.first_bin_fraction), _fmt(im.prediction.first_bin_fraction),
                        _fmt(255.0 * im.max_delta)])

    hist_in = sum(im.input.histogram for im in ev.images)
    hist_pred = sum(im.prediction.histogram for im in ev.images)
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "lower_255", "upper_255", "input_count", "prediction_count"])
        for k, (a, b) in enumerate(zip(hist_in, hist_pred)):
            w.writerow([k, 5 * k, 5 * (k + 1), int(a), int(b)])

    err_dir = out / "errors"
    for p, pred in zip(pairs, preds):
        for tag, img in (("input", p.input.pixels), ("prediction", pred)):
            err = abs_error_image(p.target, img)
            save_image(UsImage(err.grid), err_dir / f"{p.name}_{tag}.pgm", stage="abs_error",
                       max_error_255=err.max_error_255)

    summary = ev.summary()
    summary["split"] = args.split
    summary["scheme"] = manifest.scheme.factor_label
    summary["baselines"] = _baseline_table(pairs, manifest.scheme)
    _write_json(out / "summary.json", summary)
    log.info("median PSNR input %.4f dB, prediction %.4f dB", ev.input_stats["psnr"].median,
             ev.prediction_stats["psnr"].median)
    return EXIT_OK


def cmd_video(args) -> int:
    model = model_load(args.model, scheme=args.scheme)
    paths = sorted(Path(args.frames_dir).glob("frame_*.pgm"))
    if not paths:
        raise DataError(f"no frame_*.pgm files in {args.frames_dir}")
    frames = [load_image(p) for p in paths]
    target_lines = args.lines
    if args.low_res and target_lines is None:
        meta = read_sidecar(paths[0])
        target_lines = meta.get("target_lines")
    outputs, report = process_stream(frames, args.scheme, model, simulate=not args.low_res,
                                     target_lines=target_lines, workers=args.workers)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.report).parent / "frames_sr"
    for i, img in enumerate(outputs):
        save_image(img, out_dir / FRAME_PATTERN.format(i), stage="prediction",
                   scheme=args.scheme.factor_label)
    payload = report.to_json()
    payload["inputs"] = [p.name for p in paths]
    payload["output_dir"] = str(out_dir)
    _write_json(args.report, payload)
    log.info("%d frames, mean latency %.3f ms", report.count, payload["mean_ms"])
    return EXIT_OK


def cmd_freq(args) -> int:
    hz = acquisition_frequency(AcquisitionModel(depth=args.depth, lines=args.lines, c=args.c))
    print(f"{hz:.6f} Hz")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beamsr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="write a synthetic speckle phantom corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--lines", type=int, default=64)
    s.add_argument("--depth", type=int, default=64)
    s.add_argument("--district", default="phantom")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("build-dataset", help="decimate, up-sample and split a corpus")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--scheme", type=_scheme, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ratios", type=float, nargs=3, default=[1500, 400, 200])
    s.add_argument("--district", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", help="train the refinement network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON with optional 'model', 'train', 'loss' sections")
    s.add_argument("--epochs", type=int, help="override train.epochs")
    s.add_argument("--out-model", required=True)
    s.add_argument("--history", help="CSV of per-epoch loss and validation PSNR")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="super-resolve one image")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="metrics, box statistics and error dumps")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--report", required=True, help="output directory")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("video", help="super-resolve a directory of frame_NNNNNN.pgm frames")
    s.add_argument("--model", required=True)
    s.add_argument("--frames-dir", required=True)
    s.add_argument("--scheme", type=_scheme, required=True)
    s.add_argument("--report", required=True, help="latency JSON path")
    s.add_argument("--out-dir")
    s.add_argument("--low-res", action="store_true",
                   help="frames are already decimated acquisitions")
    s.add_argument("--lines", type=int, help="full line count for --low-res frames")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_video)

    s = sub.add_parser("freq", help="frame rate c / (2 d l)")
    s.add_argument("--c", type=float, default=1540.0, help="speed of sound, m/s")
    s.add_argument("--depth", type=float, required=True, help="imaging depth, m")
    s.add_argument("--lines", type=float, required=True)
    s.set_defaults(func=cmd_freq)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericalDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
