"""Train the toy configuration and print per-epoch progress.

    python scripts/run_toy.py --out runs/toy
"""

import argparse
import time

from dan.config import RunConfig
from dan.train import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None, help="INI file (default: built-in toy preset)")
    ap.add_argument("--out", default="runs/toy")
    args = ap.parse_args()

    cfg = RunConfig.load(args.config, base=RunConfig.toy()) if args.config else RunConfig.toy()
    t0 = time.time()

    def show(row):
        print(
            f"epoch {row['epoch']:>2}  loss {row['train_total']:.2f}  "
            f"train {row['train_accuracy']:.3f}  held-out {row['eval_accuracy']:.3f}  "
            f"overlap {row['eval_head_overlap']:.3f}  [{time.time() - t0:.0f} s]"
        )

    res = train(cfg, args.out, on_epoch=show)
    print(f"final train accuracy {res.train_report.accuracy:.4f}, held-out {res.eval_report.accuracy:.4f}")
    print(f"artifacts in {args.out}")


if __name__ == "__main__":
    main()
