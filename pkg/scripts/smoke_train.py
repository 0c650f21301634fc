"""Train the tiny 2X network on the seeded phantom corpus and report the
input-vs-prediction comparison used by the acceptance suite.

    python scripts/smoke_train.py [--epochs 50] [--batch-size 8] [--lr-start 1e-3] [--out run.json]
"""

import argparse
import json
import logging
from dataclasses import replace

from beamsr.experiments import SmokeConfig, run_smoke


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--lr-start", type=float, default=1e-3)
    ap.add_argument("--lr-end", type=float, default=1e-6)
    ap.add_argument("--lateral-sigma", type=float, default=0.0)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = SmokeConfig()
    cfg = replace(
        base,
        phantom=replace(base.phantom, lateral_sigma=args.lateral_sigma),
        train=replace(base.train, epochs=args.epochs, batch_size=args.batch_size,
                      lr_start=args.lr_start, lr_end=args.lr_end),
    )
    result = run_smoke(cfg)
    summary = result.summary()
    summary["trend_non_decreasing"] = result.trend_non_decreasing
    text = json.dumps(summary, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
